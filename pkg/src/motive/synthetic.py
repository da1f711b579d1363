"""Synthetic worlds with a known joint distribution over concepts.

The motivation depends on action-object and action-scene interactions, so
pairwise statistics only partly recover it. Features carry a linear signal
of every concept; by default the motivation signal is the weakest, so
vision alone ranks motivations poorly while action, object and scene are
recognizable. Potential tensors are log co-occurrence statistics
of the true joint, which stand in for language-model scores.
"""

import itertools
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .dataset import Example
from .graph import AXIS, Configuration, GraphSpec
from .knowledge import FACTORS, KINDS, PotentialTensor, Vocabulary, standardize

DEFAULT_DIMS = (10, 4, 6, 8)
DEFAULT_SIGNAL = (0.6, 1.5, 1.5, 1.5)


@dataclass
class World:
    joint: np.ndarray
    embeddings: List[np.ndarray]
    vocabs: Dict[str, Vocabulary]
    signal: tuple
    noise: float
    seed: int

    @property
    def dims(self):
        return self.joint.shape

    def potentials(self, smoothing=1e-4, standardized=True) -> List[PotentialTensor]:
        """Log marginal co-occurrence tables for the 13 factors."""
        out = []
        hashes = {k: v.content_hash() for k, v in self.vocabs.items()}
        for rel in FACTORS:
            keep = {AXIS[k] for k in rel}
            marg = self.joint.sum(axis=tuple(i for i in range(4) if i not in keep))
            t = PotentialTensor(rel, np.log(marg + smoothing), {k: hashes[k] for k in rel})
            out.append(standardize(t) if standardized else t)
        return out

    def spec(self, **kwargs) -> GraphSpec:
        return GraphSpec.from_potentials(self.potentials(**kwargs), self.embeddings[0].shape[1],
                                         vocabs=self.vocabs)

    def sample(self, n, rng, prefix="img") -> List[Example]:
        flat = self.joint.ravel()
        picks = rng.choice(flat.size, size=n, p=flat / flat.sum())
        out = []
        for j, p in enumerate(picks):
            y = Configuration(*(int(v) for v in np.unravel_index(p, self.dims)))
            x = sum(g * E[c] for g, E, c in zip(self.signal, self.embeddings, y))
            x = x + self.noise * rng.standard_normal(len(x))
            out.append(Example("%s%05d" % (prefix, j), x, y))
        return out


def _dirichlet(rng, size, alpha):
    return rng.dirichlet(np.full(size, alpha))


def make_world(seed=0, dims=DEFAULT_DIMS, n_features=20, signal=DEFAULT_SIGNAL, noise=1.0,
               sharpness=2.5, concentration=0.6) -> World:
    """Draw a random joint over (motivation, action, object, scene).

    ``sharpness`` scales the action-object-motivation and
    action-scene-motivation interaction tables. ``signal`` (a scalar or one
    gain per concept) and ``noise`` set how informative the features are.
    """
    signal = tuple(float(g) for g in np.broadcast_to(np.asarray(signal, dtype=float), (4,)))
    rng = np.random.default_rng(seed)
    M, A, O, S = dims
    p_a = _dirichlet(rng, A, 2.0)
    p_o = np.stack([_dirichlet(rng, O, concentration) for _ in range(A)])
    p_s = np.stack([_dirichlet(rng, S, concentration) for _ in range(A)])
    ao = sharpness * rng.standard_normal((A, O, M))
    as_ = sharpness * rng.standard_normal((A, S, M))
    bias = rng.standard_normal(M)
    joint = np.zeros((M, A, O, S))
    for a, o, s in itertools.product(range(A), range(O), range(S)):
        logit = bias + ao[a, o] + as_[a, s]
        pm = np.exp(logit - logit.max())
        pm /= pm.sum()
        joint[:, a, o, s] = p_a[a] * p_o[a, o] * p_s[a, s] * pm
    joint /= joint.sum()
    embeddings = [0.5 * rng.standard_normal((m, n_features)) for m in dims]
    vocabs = {
        k: Vocabulary.from_strings(k, ["%s %d" % (k, i) for i in range(m)])
        for k, m in zip(KINDS, dims)
    }
    return World(joint, embeddings, vocabs, signal, noise, seed)
