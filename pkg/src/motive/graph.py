"""Exact inference on the four-concept factor graph.

Every configuration (motivation, action, object, scene) is scored at once by
broadcasting the unary classifier outputs and the weighted potential tensors
into a dense 4-D array. K-best lists, max-marginals and clamped variants are
read off that array. Ties are broken by lexicographic index order.
"""

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .knowledge import FACTORS, KINDS, SHORT, PotentialTensor, Vocabulary, canonical, relation_name

N_FACTORS = len(FACTORS)
AXIS = {k: i for i, k in enumerate(KINDS)}
_ALIASES = dict({v: k for k, v in SHORT.items()}, **{k: k for k in KINDS})


class Configuration(NamedTuple):
    m: int
    a: int
    o: int
    s: int


class ScoredConfig(NamedTuple):
    config: Configuration
    score: float


def concept_kind(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError("unknown concept %r" % name) from None


@dataclass
class GraphSpec:
    """Vocabulary sizes, the 13 factor tables and the feature dimension.

    ``active`` masks factors out of the model (a masked factor scores 0 and
    contributes nothing to the joint feature).
    """

    dims: Tuple[int, int, int, int]
    tensors: List[np.ndarray]
    n_features: int
    active: Tuple[bool, ...] = (True,) * N_FACTORS
    vocabs: Optional[Dict[str, Vocabulary]] = None
    normalization: List[Optional[Tuple[float, float]]] = field(default_factory=list)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 4 or min(self.dims) < 1:
            raise ValueError("need four positive vocabulary sizes, got %r" % (self.dims,))
        if len(self.tensors) != N_FACTORS:
            raise ValueError("expected %d factor tensors, got %d" % (N_FACTORS, len(self.tensors)))
        self.active = tuple(bool(a) for a in self.active)
        tensors = []
        for rel, t in zip(FACTORS, self.tensors):
            t = np.ascontiguousarray(t, dtype=np.float64)
            want = tuple(self.dims[AXIS[k]] for k in rel)
            if t.shape != want:
                raise ValueError(
                    "factor %s has shape %r, expected %r" % (relation_name(rel), t.shape, want)
                )
            tensors.append(t)
        self.tensors = tensors
        self._bshapes = [
            tuple(self.dims[i] if KINDS[i] in rel else 1 for i in range(4)) for rel in FACTORS
        ]
        self._axes = [tuple(AXIS[k] for k in rel) for rel in FACTORS]

    @classmethod
    def from_potentials(cls, potentials: Sequence[PotentialTensor], n_features, vocabs=None):
        by_rel = {p.relation: p for p in potentials}
        missing = [relation_name(r) for r in FACTORS if r not in by_rel]
        if missing:
            raise ValueError("missing factor tensors: %s" % ", ".join(missing))
        dims = [None] * 4
        for p in potentials:
            for k, d in zip(p.relation, p.dims):
                if dims[AXIS[k]] not in (None, d):
                    raise ValueError("inconsistent %s size across tensors" % k)
                dims[AXIS[k]] = d
        if vocabs is not None:
            for k in KINDS:
                if len(vocabs[k]) != dims[AXIS[k]]:
                    raise ValueError("%s vocabulary size does not match the tensors" % k)
        return cls(
            tuple(dims),
            [by_rel[r].values for r in FACTORS],
            n_features,
            vocabs=vocabs,
            normalization=[by_rel[r].normalization for r in FACTORS],
        )

    @classmethod
    def empty(cls, dims, n_features):
        """A graph with all-zero, inactive language factors."""
        tensors = [np.zeros(tuple(dims[AXIS[k]] for k in rel)) for rel in FACTORS]
        return cls(tuple(dims), tensors, n_features, active=(False,) * N_FACTORS)

    def with_active(self, active):
        return GraphSpec(self.dims, self.tensors, self.n_features, tuple(active), self.vocabs,
                         list(self.normalization))

    def without_trinaries(self):
        return self.with_active(a and len(rel) < 3 for a, rel in zip(self.active, FACTORS))

    @property
    def n_configs(self):
        return int(np.prod(self.dims))

    def factor_values(self, y) -> np.ndarray:
        """The 13 potential values L_f(y); masked factors read 0."""
        out = np.zeros(N_FACTORS)
        for f, (t, axes) in enumerate(zip(self.tensors, self._axes)):
            if self.active[f]:
                out[f] = t[tuple(y[i] for i in axes)]
        return out

    def factor_values_many(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=np.intp).reshape(-1, 4)
        out = np.zeros((len(ys), N_FACTORS))
        for f, (t, axes) in enumerate(zip(self.tensors, self._axes)):
            if self.active[f]:
                out[:, f] = t[tuple(ys[:, i] for i in axes)]
        return out


def _check_features(spec, features):
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (spec.n_features,):
        raise ValueError("feature vector has shape %r, expected (%d,)" % (x.shape, spec.n_features))
    return x


def unary_scores(model, features) -> List[np.ndarray]:
    return [W @ features for W in model.W]


def language_array(spec: GraphSpec, u) -> np.ndarray:
    """Sum of weighted potentials over all configurations."""
    out = np.zeros(spec.dims)
    for f in range(N_FACTORS):
        if spec.active[f]:
            out += u[f] * spec.tensors[f].reshape(spec._bshapes[f])
    return out


def vision_array(spec: GraphSpec, model, features) -> np.ndarray:
    vm, va, vo, vs = unary_scores(model, _check_features(spec, features))
    return ((vm[:, None, None, None] + va[None, :, None, None]) + vo[None, None, :, None]) + vs[
        None, None, None, :
    ]


def score_array(spec: GraphSpec, model, features, language=None) -> np.ndarray:
    """Scores of every configuration, indexed ``[m, a, o, s]``.

    ``language`` may carry a precomputed :func:`language_array` for ``model.u``.
    """
    if language is None:
        language = language_array(spec, model.u)
    return vision_array(spec, model, features) + language


def score_config(spec: GraphSpec, model, features, y) -> float:
    """Score of one configuration, summed term by term.

    Uses the same association order as :func:`score_array` so the two agree
    bit for bit.
    """
    x = _check_features(spec, features)
    y = Configuration(*y)
    _check_config(spec, y)
    v = unary_scores(model, x)
    vis = ((v[0][y.m] + v[1][y.a]) + v[2][y.o]) + v[3][y.s]
    lang = 0.0
    for f in range(N_FACTORS):
        if spec.active[f]:
            lang += model.u[f] * spec.tensors[f][tuple(y[i] for i in spec._axes[f])]
    return float(vis + lang)


def _check_config(spec, y):
    for k, i, d in zip(KINDS, y, spec.dims):
        if not 0 <= i < d:
            raise IndexError("%s index %d out of range [0, %d)" % (k, i, d))


def top_k(scores: np.ndarray, K: int, exclude=None) -> List[Tuple[Tuple[int, ...], float]]:
    """Exact top-K cells of an array, best first, ties by lexicographic index."""
    flat = scores.ravel()
    n = flat.size
    limit = n - (1 if exclude is not None else 0)
    if not 1 <= K <= limit:
        raise ValueError("K=%d out of range [1, %d]" % (K, limit))
    if exclude is not None:
        flat = flat.copy()
        flat[np.ravel_multi_index(tuple(exclude), scores.shape)] = -np.inf
    if K == n:
        cand = np.arange(n)
    else:
        kth = np.partition(flat, n - K)[n - K]
        cand = np.flatnonzero(flat >= kth)
    order = np.lexsort((cand, -flat[cand]))[:K]
    picked = cand[order]
    coords = np.unravel_index(picked, scores.shape)
    return [
        (tuple(int(c[j]) for c in coords), float(flat[picked[j]])) for j in range(len(picked))
    ]


def kbest(spec, model, features, K, exclude=None, scores=None) -> List[ScoredConfig]:
    """Exact K best configurations, optionally skipping ``exclude``."""
    if scores is None:
        scores = score_array(spec, model, features)
    if exclude is not None:
        _check_config(spec, exclude)
    return [ScoredConfig(Configuration(*c), s) for c, s in top_k(scores, K, exclude)]


def _clamp_index(spec, clamp: Dict[str, int]):
    index = [slice(None)] * 4
    for name, value in clamp.items():
        kind = concept_kind(name)
        axis = AXIS[kind]
        if not 0 <= value < spec.dims[axis]:
            raise IndexError("clamped %s index %d out of range [0, %d)" % (kind, value, spec.dims[axis]))
        index[axis] = slice(int(value), int(value) + 1)
    return tuple(index)


def clamped_kbest(spec, model, features, clamp: Dict[str, int], K, scores=None) -> List[ScoredConfig]:
    """Exact K-best over configurations that agree with ``clamp``.

    ``clamp`` maps concept names (``"a"`` or ``"action"`` etc.) to indices.
    """
    if scores is None:
        scores = score_array(spec, model, features)
    index = _clamp_index(spec, clamp)
    offsets = [s.start or 0 for s in index]
    sub = scores[index]
    out = []
    for c, s in top_k(sub, K):
        out.append(ScoredConfig(Configuration(*(o + i for o, i in zip(offsets, c))), s))
    return out


def max_marginals(spec, model, features, concept="motivation", clamp=None, scores=None) -> np.ndarray:
    """Best score for each value of ``concept``, maximizing over the rest.

    With ``clamp``, the maximization is restricted to configurations that
    agree with it; a clamped concept then has -inf outside its fixed value.
    """
    if scores is None:
        scores = score_array(spec, model, features)
    axis = AXIS[concept_kind(concept)]
    if clamp:
        masked = np.full(scores.shape, -np.inf)
        index = _clamp_index(spec, clamp)
        masked[index] = scores[index]
        scores = masked
    others = tuple(i for i in range(4) if i != axis)
    return scores.max(axis=others)
