"""Compiled dual coordinate ascent for the n-slack working-set QP.

Dual problem, one block per training image::

    max  sum(alpha * loss) - 0.5 * ||theta||^2,   theta = sum(alpha * dpsi)
    s.t. alpha >= 0,  sum(alpha[block]) <= C

Each block carries an implicit slack variable with zero gradient, so every
step moves mass between two variables of the same block (SMO style) along
the maximal-violation pair. ``theta`` is updated in place.
"""

import numpy as np
from numba import njit

N_CONCEPTS = 4


@njit(cache=True)
def _block_gradient(theta, wofs, uofs, D, nf, phi, y, Ly, H, LH, loss, lo, hi, g):
    # g[k] = loss[k] - theta . (psi(y) - psi(h_k))
    dot_y = np.zeros(N_CONCEPTS)
    for c in range(N_CONCEPTS):
        base = wofs[c] + y[c] * D
        acc = 0.0
        for d in range(D):
            acc += theta[base + d] * phi[d]
        dot_y[c] = acc
    for k in range(lo, hi):
        m = 0.0
        for c in range(N_CONCEPTS):
            if H[k, c] != y[c]:
                base = wofs[c] + H[k, c] * D
                acc = 0.0
                for d in range(D):
                    acc += theta[base + d] * phi[d]
                m += dot_y[c] - acc
        for f in range(nf):
            m += theta[uofs + f] * (Ly[f] - LH[k, f])
        g[k - lo] = loss[k] - m


@njit(cache=True)
def _block_violation(g, alpha, lo, hi, C):
    total = 0.0
    up = 0.0
    down = np.inf
    for k in range(lo, hi):
        total += alpha[k]
        if g[k - lo] > up:
            up = g[k - lo]
        if alpha[k] > 0.0 and g[k - lo] < down:
            down = g[k - lo]
    if C - total > 0.0 and down > 0.0:
        down = 0.0
    return up - down


@njit(cache=True)
def _move(theta, wofs, uofs, D, nf, phi, ca, cb, La, Lb, t):
    # theta += t * (psi(a) - psi(b))
    for c in range(N_CONCEPTS):
        if ca[c] != cb[c]:
            ba = wofs[c] + ca[c] * D
            bb = wofs[c] + cb[c] * D
            for d in range(D):
                theta[ba + d] += t * phi[d]
                theta[bb + d] -= t * phi[d]
    for f in range(nf):
        theta[uofs + f] += t * (La[f] - Lb[f])


@njit(cache=True)
def _optimize_block(theta, wofs, uofs, D, nf, phi, y, Ly, H, LH, loss, alpha,
                    lo, hi, G, gofs, C, tol, max_steps, g):
    k = hi - lo
    for _ in range(max_steps):
        total = 0.0
        for r in range(lo, hi):
            total += alpha[r]
        slack = C - total
        # most increasing variable; -1 is the slack
        i = -1
        gi = 0.0
        for r in range(k):
            if g[r] > gi:
                gi = g[r]
                i = r
        j = -2
        gj = np.inf
        for r in range(k):
            if alpha[lo + r] > 0.0 and g[r] < gj:
                gj = g[r]
                j = r
        if slack > 0.0 and gj > 0.0:
            j = -1
            gj = 0.0
        if j == -2 or gi - gj <= tol or i == j:
            return
        if i == -1:
            q = G[gofs + j * k + j]
            room = alpha[lo + j]
        elif j == -1:
            q = G[gofs + i * k + i]
            room = slack
        else:
            q = G[gofs + i * k + i] + G[gofs + j * k + j] - 2.0 * G[gofs + i * k + j]
            room = alpha[lo + j]
        if q > 1e-300:
            t = (gi - gj) / q
            if t > room:
                t = room
        else:
            t = room
        if t <= 0.0:
            return
        if i >= 0:
            alpha[lo + i] += t
        if j >= 0:
            alpha[lo + j] -= t
            if alpha[lo + j] < 0.0:
                alpha[lo + j] = 0.0
        # theta moves by t * (dpsi_i - dpsi_j) = t * (psi(h_j) - psi(h_i))
        if j >= 0 and i >= 0:
            _move(theta, wofs, uofs, D, nf, phi, H[lo + j], H[lo + i], LH[lo + j], LH[lo + i], t)
        elif j >= 0:
            _move(theta, wofs, uofs, D, nf, phi, H[lo + j], y, LH[lo + j], Ly, t)
        else:
            _move(theta, wofs, uofs, D, nf, phi, y, H[lo + i], Ly, LH[lo + i], t)
        for r in range(k):
            delta = 0.0
            if i >= 0:
                delta += G[gofs + r * k + i]
            if j >= 0:
                delta -= G[gofs + r * k + j]
            g[r] -= t * delta


@njit(cache=True)
def solve(theta, wofs, uofs, D, nf, Phi, Y, Ly, starts, H, LH, loss, alpha, G, gstarts,
          C, tol, max_sweeps, max_steps, seed):
    """Run sweeps until every block's KKT violation is <= tol.

    Returns ``(sweeps, worst_violation)``.
    """
    n = len(starts) - 1
    kmax = 0
    for b in range(n):
        if starts[b + 1] - starts[b] > kmax:
            kmax = starts[b + 1] - starts[b]
    g = np.zeros(kmax)
    worst = 0.0
    np.random.seed(seed)
    order = np.arange(n)
    for sweep in range(max_sweeps):
        worst = 0.0
        if seed >= 0:
            np.random.shuffle(order)
        for b in order:
            lo = starts[b]
            hi = starts[b + 1]
            if hi == lo:
                continue
            _block_gradient(theta, wofs, uofs, D, nf, Phi[b], Y[b], Ly[b], H, LH, loss, lo, hi, g)
            v = _block_violation(g, alpha, lo, hi, C)
            if v > worst:
                worst = v
            if v > tol:
                _optimize_block(theta, wofs, uofs, D, nf, Phi[b], Y[b], Ly[b], H, LH, loss, alpha,
                                lo, hi, G, gstarts[b], C, tol, max_steps, g)
        if worst <= tol:
            return sweep + 1, worst
    return max_sweeps, worst


@njit(cache=True)
def ovr_dual_cd(Xa, Y, C, tol, max_epochs, seed):
    """Dual coordinate descent for one-vs-rest L2-regularized hinge SVMs.

    ``Y`` holds +-1 targets, one column per class. Returns ``(W, epochs,
    worst)`` with ``W`` of shape (classes, features).
    """
    n, d = Xa.shape
    k = Y.shape[1]
    A = np.zeros((n, k))
    W = np.zeros((k, d))
    Q = np.zeros(n)
    for i in range(n):
        for j in range(d):
            Q[i] += Xa[i, j] * Xa[i, j]
    np.random.seed(seed)
    order = np.arange(n)
    worst = 0.0
    for epoch in range(max_epochs):
        np.random.shuffle(order)
        worst = 0.0
        for i in order:
            if Q[i] <= 0.0:
                continue
            for c in range(k):
                m = 0.0
                for j in range(d):
                    m += W[c, j] * Xa[i, j]
                G = Y[i, c] * m - 1.0
                a = A[i, c]
                if a <= 0.0:
                    pg = min(G, 0.0)
                elif a >= C:
                    pg = max(G, 0.0)
                else:
                    pg = G
                if abs(pg) > worst:
                    worst = abs(pg)
                if pg == 0.0:
                    continue
                new = min(max(a - G / Q[i], 0.0), C)
                delta = (new - a) * Y[i, c]
                A[i, c] = new
                for j in range(d):
                    W[c, j] += delta * Xa[i, j]
        if worst < tol:
            return W, epoch + 1, worst
    return W, max_epochs, worst
