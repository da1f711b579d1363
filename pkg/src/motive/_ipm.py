"""Primal-dual interior-point solver for the n-slack working-set QP.

Primal::

    min  0.5 ||theta||^2 + C sum(xi)
    s.t. dpsi_k . theta + xi_{n(k)} >= loss_k     (one row per working-set constraint)
         xi >= 0

Rows of ``dpsi`` are never formed. A row is a signed label pattern over the
concatenated concept vocabularies, tensored with its image's features, plus
a 13-vector of factor differences. The Newton systems are reduced to a dense
system in theta whose vision block is assembled from per-image pattern Gram
matrices and feature outer products.
"""

import numpy as np
import scipy.linalg
import scipy.sparse as sp


class WorkingSetQP:
    def __init__(self, Phi, Y, Ly, dims, blk, H, LH, loss, C):
        self.Phi = np.asarray(Phi, dtype=np.float64)
        self.n, self.D = self.Phi.shape
        self.Mtot = int(sum(dims))
        self.p_v = self.Mtot * self.D
        self.nf = Ly.shape[1]
        self.p = self.p_v + self.nf
        self.C = float(C)
        self.blk = np.asarray(blk, dtype=np.intp)
        self.m = len(self.blk)
        self.loss = np.asarray(loss, dtype=np.float64)
        self.dL = Ly[self.blk] - LH
        offs = np.concatenate([[0], np.cumsum(dims)[:-1]])
        Yk = Y[self.blk]
        rows, cols, vals = [], [], []
        base = self.blk * self.Mtot
        for c in range(4):
            diff = np.flatnonzero(H[:, c] != Yk[:, c])
            rows += [diff, diff]
            cols += [base[diff] + offs[c] + Yk[diff, c], base[diff] + offs[c] + H[diff, c]]
            vals += [np.ones(len(diff)), -np.ones(len(diff))]
        self.A = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.m, self.n * self.Mtot),
        )
        self.At = self.A.T.tocsr()
        self.E = sp.csr_matrix((np.ones(self.m), (np.arange(self.m), self.blk)), shape=(self.m, self.n))
        self.Et = self.E.T.tocsr()
        self.PhiPhi = (self.Phi[:, :, None] * self.Phi[:, None, :]).reshape(self.n, self.D * self.D)

    # -- structured products -------------------------------------------------

    def z_dot(self, theta):
        """dpsi_k . theta for every constraint."""
        W = theta[:self.p_v].reshape(self.Mtot, self.D)
        V = self.Phi @ W.T
        return self.A @ V.ravel() + self.dL @ theta[self.p_v:]

    def zt_dot(self, w):
        """sum_k w_k dpsi_k."""
        R = (self.At @ w).reshape(self.n, self.Mtot)
        return np.concatenate([(R.T @ self.Phi).ravel(), self.dL.T @ w])

    def _schur_matrix(self, d, h):
        """I + Z' (D - D E diag(1/h) E' D) Z, the Newton matrix with xi eliminated.

        The rank-one correction of each image is subtracted from that image's
        small pattern matrix before it is spread over feature outer products.
        """
        Mt, D, n = self.Mtot, self.D, self.n
        AD = sp.diags(d) @ self.A
        B = (self.At @ AD).tocoo()
        Bd = np.zeros((n, Mt, Mt))
        np.add.at(Bd, (B.row // Mt, B.row % Mt, B.col % Mt), B.data)
        r = (self.At @ d).reshape(n, Mt)
        q = self.Et @ (d[:, None] * self.dL)
        Bd -= r[:, :, None] * (r / h[:, None])[:, None, :]
        Hvv = (Bd.reshape(n, Mt * Mt).T @ self.PhiPhi).reshape(Mt, Mt, D, D)
        Hvv = Hvv.transpose(0, 2, 1, 3).reshape(self.p_v, self.p_v)
        Cn = np.asarray(self.At @ (d[:, None] * self.dL)).reshape(n, Mt, self.nf)
        Cn -= r[:, :, None] * (q / h[:, None])[:, None, :]
        Hvl = np.einsum("nd,nif->idf", self.Phi, Cn).reshape(self.p_v, self.nf)
        Hll = self.dL.T @ (d[:, None] * self.dL) - q.T @ (q / h[:, None])
        S = np.empty((self.p, self.p))
        S[:self.p_v, :self.p_v] = Hvv
        S[:self.p_v, self.p_v:] = Hvl
        S[self.p_v:, :self.p_v] = Hvl.T
        S[self.p_v:, self.p_v:] = Hll
        S[np.diag_indices(self.p)] += 1.0
        return S

    @staticmethod
    def _factor(S):
        # S >= I in exact arithmetic; jitter only absorbs rounding
        jitter = 0.0
        scale = float(np.max(np.abs(np.diag(S))))
        for _ in range(12):
            try:
                return scipy.linalg.cho_factor(S + jitter * np.eye(len(S)) if jitter else S)
            except np.linalg.LinAlgError:
                jitter = max(1e-14 * scale, 10.0 * jitter)
        raise np.linalg.LinAlgError("Newton matrix is not positive definite")

    def feasible_dual(self, z1):
        """Project IPM multipliers onto the dual feasible set."""
        alpha = np.maximum(z1, 0.0)
        sums = np.bincount(self.blk, weights=alpha, minlength=self.n)
        over = sums > self.C
        if over.any():
            alpha = alpha * np.where(over, self.C / np.where(over, sums, 1.0), 1.0)[self.blk]
        return alpha

    def gap(self, alpha):
        """Duality gap of ``alpha`` and ``theta = Z' alpha``, and the primal value."""
        theta = self.zt_dot(alpha)
        half = 0.5 * float(theta @ theta)
        xi = np.zeros(self.n)
        np.maximum.at(xi, self.blk, self.loss - self.z_dot(theta))
        primal = half + self.C * float(xi.sum())
        return primal - (float(alpha @ self.loss) - half), primal, theta

    # -- solver ----------------------------------------------------------------

    def solve(self, tol=1e-8, max_iter=100, patience=5):
        """Mehrotra predictor-corrector.

        Every iterate's multipliers are projected to a feasible dual point
        and scored by the duality gap against ``theta = Z' alpha``, relative
        to ``max(1, primal)``. The best such point is returned once the gap
        drops below ``tol``, or when ``patience`` iterations bring no
        improvement (rounding limits accuracy near the boundary).

        Returns ``(alpha, theta, iterations, relative_gap)``.
        """
        m, n, p, C = self.m, self.n, self.p, self.C
        counts = np.bincount(self.blk, minlength=n).astype(np.float64)
        theta = np.zeros(p)
        xi = np.ones(n)
        np.maximum.at(xi, self.blk, self.loss + 1.0)
        s1 = xi[self.blk] - self.loss
        s2 = xi.copy()
        z1 = 0.5 * C / counts[self.blk]
        z2 = np.full(n, 0.5 * C)
        best = (np.inf, None, None)
        stale = 0
        it = 0
        for it in range(1, max_iter + 1):
            alpha = self.feasible_dual(z1)
            g, primal, th = self.gap(alpha)
            rel = g / max(1.0, abs(primal))
            if rel < best[0]:
                best, stale = (rel, alpha, th), 0
            else:
                stale += 1
            if rel <= tol or stale >= patience:
                break
            rd_t = theta - self.zt_dot(z1)
            rd_x = C - self.Et @ z1 - z2
            rp1 = self.z_dot(theta) + xi[self.blk] - self.loss - s1
            rp2 = xi - s2
            mu = (s1 @ z1 + s2 @ z2) / (m + n)
            d1, d2 = z1 / s1, z2 / s2
            h = self.Et @ d1 + d2
            factor = self._factor(self._schur_matrix(d1, h))

            def newton(rc1, rc2):
                # right-hand side: -r_d - A'[(z/s) r_p + r_c/s]
                w1 = d1 * rp1 + rc1 / s1
                w2 = d2 * rp2 + rc2 / s2
                r_t = -rd_t - self.zt_dot(w1)
                r_x = -rd_x - (self.Et @ w1 + w2)
                dt = scipy.linalg.cho_solve(factor, r_t - self.zt_dot(d1 * (r_x / h)[self.blk]))
                dx = (r_x - self.Et @ (d1 * self.z_dot(dt))) / h
                ds1 = self.z_dot(dt) + dx[self.blk] + rp1
                ds2 = dx + rp2
                dz1 = -(rc1 + z1 * ds1) / s1
                dz2 = -(rc2 + z2 * ds2) / s2
                return dt, dx, ds1, ds2, dz1, dz2

            def step_to_boundary(v, dv):
                neg = dv < 0
                return min(1.0, float(np.min(-v[neg] / dv[neg]))) if neg.any() else 1.0

            aff = newton(s1 * z1, s2 * z2)
            # a QP couples theta and z in the dual residual, so both move by one step
            a = min(step_to_boundary(s1, aff[2]), step_to_boundary(s2, aff[3]),
                    step_to_boundary(z1, aff[4]), step_to_boundary(z2, aff[5]))
            mu_aff = ((s1 + a * aff[2]) @ (z1 + a * aff[4]) + (s2 + a * aff[3]) @ (z2 + a * aff[5])) / (m + n)
            sigma = (mu_aff / mu) ** 3
            dt, dx, ds1, ds2, dz1, dz2 = newton(
                s1 * z1 + aff[2] * aff[4] - sigma * mu, s2 * z2 + aff[3] * aff[5] - sigma * mu
            )
            a = min(1.0, 0.995 * min(step_to_boundary(s1, ds1), step_to_boundary(s2, ds2),
                                     step_to_boundary(z1, dz1), step_to_boundary(z2, dz2)))
            theta = theta + a * dt
            xi = xi + a * dx
            s1 = s1 + a * ds1
            s2 = s2 + a * ds2
            z1 = z1 + a * dz1
            z2 = z2 + a * dz2
        rel, alpha, theta = best
        return alpha, theta, it, float(rel)
