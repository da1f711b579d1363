"""Independent reference implementations used as test oracles.

Nothing here calls into the package's scoring code: the ARPA recursion is
written straight from the backoff definition, and inference enumerates
configurations with four nested loops.
"""

import itertools

import numpy as np

from motive.knowledge import FACTORS, KINDS

AXIS = {k: i for i, k in enumerate(KINDS)}


def ref_logprob(entries, order, context, word, floor=-7.0):
    """Backoff recursion, literally: hit, or backoff(context) + shorter query."""
    vocab = {k[0] for k in entries if len(k) == 1}
    if word not in vocab:
        if "<unk>" not in vocab:
            return floor
        word = "<unk>"
    ctx = tuple(t if t in vocab or "<unk>" not in vocab else "<unk>" for t in context)
    ctx = ctx[max(0, len(ctx) - (order - 1)):]

    def rec(ctx):
        if ctx + (word,) in entries:
            return entries[ctx + (word,)][0]
        bo = entries.get(ctx, (0.0, None))[1] or 0.0
        return bo + rec(ctx[1:])

    return rec(ctx)


def brute_scores(spec, W, u, x):
    """Dict config -> score from explicit loops over all four concepts."""
    dims = spec.dims
    out = {}
    for m, a, o, s in itertools.product(*(range(d) for d in dims)):
        y = (m, a, o, s)
        total = sum(float(np.dot(W[i][y[i]], x)) for i in range(4))
        for f, rel in enumerate(FACTORS):
            if spec.active[f]:
                total += u[f] * spec.tensors[f][tuple(y[AXIS[k]] for k in rel)]
        out[y] = total
    return out


def brute_kbest(scores, K, exclude=None, clamp=None):
    """Best first; equal scores in lexicographic configuration order."""
    items = [
        (y, s) for y, s in scores.items()
        if y != exclude and all(y[AXIS[k]] == v for k, v in (clamp or {}).items())
    ]
    items.sort(key=lambda t: (-t[1], t[0]))
    return items[:K]


def brute_max_marginals(scores, dims, axis=0, clamp=None):
    out = np.full(dims[axis], -np.inf)
    for y, s in scores.items():
        if all(y[AXIS[k]] == v for k, v in (clamp or {}).items()):
            out[y[axis]] = max(out[y[axis]], s)
    return out


def brute_rank(mm, truth):
    """1-based rank with ties to the lower index, by direct comparison."""
    rank = 1
    for j, v in enumerate(mm):
        if v > mm[truth] or (v == mm[truth] and j < truth):
            rank += 1
    return rank
