"""Max-margin training of the joint model and of the vision-only baselines.

The joint model is trained as an n-slack structured SVM with cutting planes:
each pass runs exact K-best inference on every training image, adds the
margin violators to a per-image working set, and re-solves the dual QP on
that working set. Small parameter vectors use a structured interior-point
solver; large ones use compiled pairwise coordinate ascent.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .graph import (
    AXIS,
    N_FACTORS,
    Configuration,
    GraphSpec,
    concept_kind,
    kbest,
    language_array,
    score_array,
)
from . import _ipm, _qp
from .knowledge import FACTORS, KINDS, relation_name

log = logging.getLogger(__name__)

MODEL_VERSION = "why-model/1"
BASELINE_VERSION = "why-baseline/1"


class QPError(RuntimeError):
    """The working-set QP did not reach its KKT tolerance."""


@dataclass
class Model:
    """Parameters of the joint model.

    ``W[i]`` has one row per label of concept ``i`` (motivation, action,
    object, scene); ``u`` holds one weight per factor in factor-list order.
    """

    W: List[np.ndarray]
    u: np.ndarray
    meta: Dict = field(default_factory=dict)
    pca: Optional[object] = None

    def __post_init__(self):
        self.W = [np.asarray(w, dtype=np.float64) for w in self.W]
        self.u = np.asarray(self.u, dtype=np.float64)
        if len(self.W) != 4:
            raise ValueError("need one weight matrix per concept")
        if self.u.shape != (N_FACTORS,):
            raise ValueError("u must have %d entries" % N_FACTORS)
        d = {w.shape[1] for w in self.W}
        if len(d) != 1:
            raise ValueError("weight matrices disagree on the feature dimension")
        if not all(np.all(np.isfinite(w)) for w in self.W) or not np.all(np.isfinite(self.u)):
            raise ValueError("non-finite model parameters")

    @property
    def n_features(self):
        return self.W[0].shape[1]

    @property
    def dims(self):
        return tuple(w.shape[0] for w in self.W)

    @classmethod
    def zeros(cls, dims, n_features):
        return cls([np.zeros((m, n_features)) for m in dims], np.zeros(N_FACTORS))

    def theta(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.W] + [self.u])

    @classmethod
    def from_theta(cls, theta, dims, n_features, **kwargs):
        W, start = [], 0
        for m in dims:
            W.append(np.array(theta[start:start + m * n_features]).reshape(m, n_features))
            start += m * n_features
        return cls(W, np.array(theta[start:start + N_FACTORS]), **kwargs)

    def with_u(self, u):
        return Model([w.copy() for w in self.W], np.asarray(u, dtype=np.float64), dict(self.meta), self.pca)


class JointFeature:
    """Sparse joint feature vector psi(y, x).

    Concept ``i`` owns a block of ``M_i * D`` coordinates, and the row of
    label ``y_i`` in that block holds the image features. The last 13
    coordinates hold the factor values of ``y``.
    """

    def __init__(self, size, indices, values):
        self.size = size
        self.indices = np.asarray(indices, dtype=np.intp)
        self.values = np.asarray(values, dtype=np.float64)

    def dense(self):
        out = np.zeros(self.size)
        np.add.at(out, self.indices, self.values)
        return out

    def dot(self, theta):
        return float(self.values @ np.asarray(theta)[self.indices])

    def __sub__(self, other):
        idx = np.concatenate([self.indices, other.indices])
        val = np.concatenate([self.values, -other.values])
        uniq, inv = np.unique(idx, return_inverse=True)
        return JointFeature(self.size, uniq, np.bincount(inv, weights=val, minlength=len(uniq)))


def theta_size(dims, n_features):
    return int(sum(dims)) * n_features + N_FACTORS


def joint_feature(spec: GraphSpec, features, y) -> JointFeature:
    x = np.asarray(features, dtype=np.float64)
    D = spec.n_features
    idx, val, start = [], [], 0
    for m, label in zip(spec.dims, y):
        idx.append(start + label * D + np.arange(D))
        val.append(x)
        start += m * D
    idx.append(start + np.arange(N_FACTORS))
    val.append(spec.factor_values(y))
    return JointFeature(start + N_FACTORS, np.concatenate(idx), np.concatenate(val))


def loss(y, h) -> float:
    """0-1 loss over the joint configuration."""
    return 0.0 if tuple(y) == tuple(h) else 1.0


class _Block:
    """Working set of one training image."""

    def __init__(self, phi, y, Ly):
        self.phi = phi
        self.phi_sq = float(phi @ phi)
        self.y = np.asarray(y, dtype=np.intp)
        self.Ly = Ly
        self.H = np.zeros((0, 4), dtype=np.intp)
        self.LH = np.zeros((0, N_FACTORS))
        self.alpha = np.zeros(0)
        self.losses = np.zeros(0)
        self.G = np.zeros((0, 0))
        self.seen = set()

    def __len__(self):
        return len(self.alpha)

    def _inner(self, A, LA, B, LB):
        # psi(a).psi(b) for configurations sharing this image's features
        same = (A[:, None, :] == B[None, :, :]).sum(axis=2)
        return self.phi_sq * same + LA @ LB.T

    def add(self, hs, Lhs, losses):
        hs = np.asarray(hs, dtype=np.intp).reshape(-1, 4)
        for h in hs:
            self.seen.add(tuple(int(v) for v in h))
        H = np.vstack([self.H, hs])
        LH = np.vstack([self.LH, Lhs])
        y = self.y[None, :]
        Ly = self.Ly[None, :]
        yy = self._inner(y, Ly, y, Ly)[0, 0]
        yh = self._inner(y, Ly, H, LH)[0]
        hh = self._inner(H, LH, H, LH)
        self.G = yy - yh[None, :] - yh[:, None] + hh
        self.H, self.LH = H, LH
        self.alpha = np.concatenate([self.alpha, np.zeros(len(hs))])
        self.losses = np.concatenate([self.losses, losses])

    def margins(self, W, u):
        """theta . (psi(y) - psi(h)) for every h in the block."""
        v = [w @ self.phi for w in W]
        sy = sum(v[i][self.y[i]] for i in range(4)) + u @ self.Ly
        sh = sum(v[i][self.H[:, i]] for i in range(4)) + self.LH @ u
        return sy - sh

    def difference(self, spec, n_dims):
        """Dense psi(y) - psi(h) rows, for checks and dual reconstruction."""
        D = len(self.phi)
        size = theta_size(n_dims, D)
        rows = np.zeros((len(self), size))
        offsets = np.concatenate([[0], np.cumsum(np.asarray(n_dims) * D)])
        for r, h in enumerate(self.H):
            for i in range(4):
                if h[i] != self.y[i]:
                    rows[r, offsets[i] + self.y[i] * D: offsets[i] + (self.y[i] + 1) * D] += self.phi
                    rows[r, offsets[i] + h[i] * D: offsets[i] + (h[i] + 1) * D] -= self.phi
            rows[r, -N_FACTORS:] = self.Ly - self.LH[r]
        return rows


class StructuredSVM:
    """n-slack cutting-plane structured SVM over the four-concept graph.

    Parameters
    ----------
    spec : GraphSpec
        Graph topology and language potentials.
    C : float
        Weight of the slack penalty.
    eps : float
        A K-best configuration joins the working set only if it violates its
        margin by more than ``eps`` beyond the current slack.
    K : int
        Number of best competing configurations examined per image and pass.
    max_passes : int
        Cap on passes over the training set.
    qp_tol : float
        Tolerance of the working-set QP: KKT violation for ``cd``, duality
        gap relative to ``max(1, primal)`` for ``ipm``.
    qp_solver : {"auto", "ipm", "cd"}
        ``ipm`` is a primal-dual interior-point method whose cost does not
        depend on C; it needs a dense square system of the size of theta.
        ``cd`` is dual coordinate ascent, cheap per step but slow when C is
        large. ``auto`` picks ``ipm`` when theta has at most
        ``ipm_max_size`` entries. When rounding stalls the interior point
        above ``qp_tol``, up to ``polish_sweeps`` coordinate sweeps follow;
        a final relative gap above ``qp_gap_limit`` raises :class:`QPError`
        and one between the two limits is logged.

    Attributes
    ----------
    model_ : Model
    blocks_ : list
        Per-image working sets with their dual variables.
    objective_ : list of float
        Full primal objective at the start of each pass (exact, since
        inference is exhaustive).
    working_objective_ : list of float
        Working-set primal after each QP re-solve.
    dual_objective_ : list of float
        Working-set dual after each QP re-solve.
    converged_ : bool
    """

    def __init__(self, spec, C=1.0, eps=1e-3, K=10, max_passes=50, qp_tol=1e-8,
                 max_qp_sweeps=100000, max_qp_steps=100000, qp_seed=-1, qp_solver="auto",
                 ipm_max_size=6000, polish_sweeps=2000, qp_gap_limit=1e-6):
        if C <= 0 or eps <= 0 or K < 1:
            raise ValueError("need C > 0, eps > 0 and K >= 1")
        if qp_solver not in ("auto", "ipm", "cd"):
            raise ValueError("qp_solver must be auto, ipm or cd")
        self.qp_solver = qp_solver
        self.ipm_max_size = int(ipm_max_size)
        self.polish_sweeps = int(polish_sweeps)
        self.qp_gap_limit = float(qp_gap_limit)
        self.spec = spec
        self.C = float(C)
        self.eps = float(eps)
        self.K = int(K)
        self.max_passes = int(max_passes)
        self.qp_tol = float(qp_tol)
        self.max_qp_sweeps = int(max_qp_sweeps)
        self.max_qp_steps = int(max_qp_steps)
        self.qp_seed = int(qp_seed)

    def fit(self, examples):
        if not examples:
            raise ValueError("no training examples")
        spec = self.spec
        dims, D = spec.dims, spec.n_features
        self.theta_ = np.zeros(theta_size(dims, D))
        self._bind_views()
        for ex in examples:
            if len(ex.features) != D:
                raise ValueError("example %s has %d features, expected %d"
                                 % (getattr(ex, "image_id", "?"), len(ex.features), D))
        self._Phi = np.ascontiguousarray([ex.features for ex in examples], dtype=np.float64)
        self._Y = np.ascontiguousarray([tuple(ex.truth) for ex in examples], dtype=np.int64)
        self._Ly = spec.factor_values_many(self._Y)
        self.blocks_ = [_Block(self._Phi[n], self._Y[n], self._Ly[n]) for n in range(len(examples))]
        self.qp_sweeps_ = []
        self.qp_gaps_ = []
        K = min(self.K, spec.n_configs - 1)
        self.objective_, self.working_objective_, self.dual_objective_ = [], [], []
        self.constraints_added_ = []
        self.converged_ = False
        for p in range(self.max_passes):
            current = Model(self._W, self._u)
            lang = language_array(spec, self._u)
            added, hinge = 0, 0.0
            for ex, blk in zip(examples, self.blocks_):
                scores = score_array(spec, current, blk.phi, language=lang)
                y = tuple(int(v) for v in blk.y)
                s_y = scores[y]
                top = kbest(spec, current, blk.phi, K, exclude=y, scores=scores)
                hinge += max(0.0, loss(y, top[0].config) - (s_y - top[0].score))
                xi = max(0.0, float(np.max(blk.losses - blk.margins(self._W, self._u)))) if len(blk) else 0.0
                new = [
                    c.config for c in top
                    if c.config not in blk.seen and loss(y, c.config) - (s_y - c.score) > xi + self.eps
                ]
                if new:
                    blk.add(new, spec.factor_values_many(new), [loss(y, h) for h in new])
                    added += len(new)
            self.objective_.append(0.5 * float(self.theta_ @ self.theta_) + self.C * hinge)
            self.constraints_added_.append(added)
            log.debug("pass %d: objective %.6g, %d constraints added", p, self.objective_[-1], added)
            if added == 0:
                self.converged_ = True
                break
            self._solve_qp()
            self.working_objective_.append(self.working_primal())
            self.dual_objective_.append(self.dual())
        if not self.converged_:
            log.warning("stopped after %d passes without convergence", self.max_passes)
        self.model_ = Model(
            [w.copy() for w in self._W],
            self._u.copy(),
            meta={
                "C": self.C, "K": self.K, "eps": self.eps, "passes": len(self.objective_),
                "converged": self.converged_, "objective": list(self.objective_),
                "constraints": int(sum(len(b) for b in self.blocks_)),
                "active": list(spec.active),
            },
        )
        return self

    def _bind_views(self):
        D = self.spec.n_features
        W, start = [], 0
        for m in self.spec.dims:
            W.append(self.theta_[start:start + m * D].reshape(m, D))
            start += m * D
        self._W = W
        self._u = self.theta_[start:]

    def _solver(self):
        if self.qp_solver != "auto":
            return self.qp_solver
        return "ipm" if len(self.theta_) <= self.ipm_max_size else "cd"

    def _solve_qp(self):
        if self._solver() == "ipm":
            self._solve_ipm()
        else:
            self._solve_cd()

    def _solve_ipm(self):
        blocks = self.blocks_
        blk = np.concatenate([np.full(len(b), n, dtype=np.intp) for n, b in enumerate(blocks)])
        H = np.vstack([b.H for b in blocks])
        LH = np.vstack([b.LH for b in blocks])
        losses = np.concatenate([b.losses for b in blocks])
        qp = _ipm.WorkingSetQP(self._Phi, self._Y, self._Ly, self.spec.dims, blk, H, LH, losses, self.C)
        alpha, theta, iters, gap = qp.solve(tol=self.qp_tol)
        self._set_dual(alpha, theta)
        self.qp_sweeps_.append(int(iters))
        if gap > self.qp_tol:
            # rounding stalled the interior point; try to finish by coordinate ascent
            log.debug("interior point stopped at relative gap %.3g; polishing", gap)
            try:
                self._solve_cd(max_sweeps=self.polish_sweeps)
            except QPError:
                pass
            polished = np.concatenate([b.alpha for b in blocks])
            g2, primal, _ = qp.gap(polished)
            g2 /= max(1.0, abs(primal))
            if g2 < gap:
                gap = g2
            else:
                self._set_dual(alpha, theta)
        self.qp_gaps_.append(float(gap))
        if gap > self.qp_tol:
            if gap > self.qp_gap_limit:
                raise QPError("working-set QP stalled at relative duality gap %.3g" % gap)
            log.info("working-set QP stalled at relative duality gap %.3g (tolerance %g)", gap, self.qp_tol)

    def _set_dual(self, alpha, theta):
        self.theta_[:] = theta
        start = 0
        for b in self.blocks_:
            b.alpha = alpha[start:start + len(b)].copy()
            start += len(b)

    def _solve_cd(self, max_sweeps=None):
        blocks = self.blocks_
        sizes = np.array([len(b) for b in blocks], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        gstarts = np.concatenate([[0], np.cumsum(sizes * sizes)]).astype(np.int64)
        H = np.ascontiguousarray(np.vstack([b.H for b in blocks]), dtype=np.int64)
        LH = np.ascontiguousarray(np.vstack([b.LH for b in blocks]))
        losses = np.concatenate([b.losses for b in blocks])
        alpha = np.concatenate([b.alpha for b in blocks])
        G = np.concatenate([b.G.ravel() for b in blocks])
        D = self.spec.n_features
        wofs = np.concatenate([[0], np.cumsum(np.asarray(self.spec.dims) * D)[:-1]]).astype(np.int64)
        uofs = int(sum(self.spec.dims) * D)
        sweeps, worst = _qp.solve(
            self.theta_, wofs, uofs, D, N_FACTORS, self._Phi, self._Y, self._Ly, starts, H, LH,
            losses, alpha, G, gstarts, self.C, self.qp_tol, max_sweeps or self.max_qp_sweeps, self.max_qp_steps,
            self.qp_seed,
        )
        for b, lo, hi in zip(blocks, starts[:-1], starts[1:]):
            b.alpha = alpha[lo:hi].copy()
        self.qp_sweeps_.append(int(sweeps))
        if worst > self.qp_tol:
            raise QPError(
                "working-set QP did not reach KKT tolerance %g in %d sweeps (violation %g)"
                % (self.qp_tol, sweeps, worst)
            )

    def working_primal(self):
        hinge = 0.0
        for blk in self.blocks_:
            if len(blk):
                hinge += max(0.0, float(np.max(blk.losses - blk.margins(self._W, self._u))))
        return 0.5 * float(self.theta_ @ self.theta_) + self.C * hinge

    def dual(self):
        lin = sum(float(b.alpha @ b.losses) for b in self.blocks_)
        return lin - 0.5 * float(self.theta_ @ self.theta_)

    def reconstruct_theta(self):
        """theta as the dual combination of working-set differences."""
        out = np.zeros_like(self.theta_)
        for blk in self.blocks_:
            if len(blk):
                out += blk.alpha @ blk.difference(self.spec, self.spec.dims)
        return out


def train_ssvm(spec, examples, C=1.0, eps=1e-3, K=10, max_passes=50, qp_tol=1e-8, qp_solver="auto") -> Model:
    """Train the joint model; see :class:`StructuredSVM`."""
    svm = StructuredSVM(spec, C=C, eps=eps, K=K, max_passes=max_passes, qp_tol=qp_tol, qp_solver=qp_solver)
    return svm.fit(examples).model_


def structured_objective(spec, model, examples, C) -> float:
    """Primal objective at ``model`` with exact loss-augmented inference."""
    theta = model.theta()
    hinge = 0.0
    lang = language_array(spec, model.u)
    for ex in examples:
        scores = score_array(spec, model, ex.features, language=lang)
        y = tuple(ex.truth)
        best = kbest(spec, model, ex.features, 1, exclude=y, scores=scores)[0]
        hinge += max(0.0, loss(y, best.config) - (scores[y] - best.score))
    return 0.5 * float(theta @ theta) + C * hinge


# -- vision-only baselines ---------------------------------------------------

@dataclass
class LinearClassifier:
    """Multiclass linear scorer ``W x + b``; ties go to the lower class index.

    ``oracle`` lists concepts whose ground-truth one-hot codes are appended
    to the features before scoring.
    """

    W: np.ndarray
    b: np.ndarray
    mode: str
    oracle: tuple = ()
    meta: Dict = field(default_factory=dict)
    pca: Optional[object] = None

    def decision_function(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return X @ self.W.T + self.b

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)


def _ovr_dual_cd(X, labels, n_classes, C, tol=1e-6, max_epochs=20000, seed=0):
    # L2-regularized hinge loss, one problem per class, solved by dual
    # coordinate descent; the bias is a constant feature
    n = len(X)
    Xa = np.ascontiguousarray(np.hstack([X, np.ones((n, 1))]), dtype=np.float64)
    Y = -np.ones((n, n_classes))
    Y[np.arange(n), labels] = 1.0
    W, epochs, worst = _qp.ovr_dual_cd(Xa, Y, float(C), float(tol), int(max_epochs), int(seed))
    if worst >= tol:
        log.warning("one-vs-rest solver stopped at epoch cap %d (violation %.3g)", epochs, worst)
    return W[:, :-1].copy(), W[:, -1].copy()


def train_multiclass_baseline(X, labels, n_classes=None, mode="one-vs-rest", C=1.0,
                              eps=1e-3, max_passes=200, seed=0) -> LinearClassifier:
    """Vision-only motivation classifier.

    ``one-vs-rest`` trains independent binary hinge-loss classifiers with a
    bias; ``crammer-singer`` trains the joint multiclass SVM as a structured
    SVM on a one-concept graph.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n_classes = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    if len(np.unique(labels)) < 2:
        raise ValueError("need at least two classes present to train a classifier")
    if mode in ("one-vs-rest", "ovr"):
        W, b = _ovr_dual_cd(X, labels, n_classes, C, seed=seed)
        return LinearClassifier(W, b, "one-vs-rest", meta={"C": C})
    if mode in ("crammer-singer", "cs"):
        spec = GraphSpec.empty((n_classes, 1, 1, 1), X.shape[1])
        examples = [_Point(x, Configuration(int(c), 0, 0, 0)) for x, c in zip(X, labels)]
        model = train_ssvm(spec, examples, C=C, eps=eps, K=n_classes - 1, max_passes=max_passes)
        return LinearClassifier(model.W[0], np.zeros(n_classes), "crammer-singer",
                                meta={"C": C, "converged": model.meta["converged"]})
    raise ValueError("unknown baseline mode %r" % mode)


@dataclass
class _Point:
    features: np.ndarray
    truth: Configuration


def crammer_singer_objective(W, X, labels, C) -> float:
    """0.5 ||W||^2 + C * sum of multiclass hinge losses."""
    S = np.asarray(X) @ W.T
    n = len(S)
    labels = np.asarray(labels)
    aug = S + 1.0
    aug[np.arange(n), labels] = -np.inf
    hinge = np.maximum(0.0, aug.max(axis=1) - S[np.arange(n), labels])
    return 0.5 * float(np.sum(W * W)) + C * float(hinge.sum())


def augment_features_with_oracle(features, truth, concepts, dims):
    """Append one-hot codes of ground-truth concepts to a feature vector.

    ``concepts`` is a sequence of concept names; ``dims`` gives the four
    vocabulary sizes in (motivation, action, object, scene) order.
    """
    if not concepts:
        raise ValueError("no oracle concepts given")
    parts = [np.asarray(features, dtype=np.float64).ravel()]
    for name in concepts:
        axis = AXIS[concept_kind(name)]
        code = np.zeros(dims[axis])
        code[truth[axis]] = 1.0
        parts.append(code)
    return np.concatenate(parts)


def factor_names():
    return [relation_name(r) for r in FACTORS]


def model_to_json(model: Model, vocab_hashes=None, normalization=None) -> Dict:
    out = {
        "version": MODEL_VERSION,
        "meta": dict(model.meta),
        "factors": factor_names(),
        "W": {k: model.W[i].tolist() for i, k in enumerate(KINDS)},
        "u": model.u.tolist(),
    }
    if vocab_hashes:
        out["meta"]["vocab_hashes"] = dict(vocab_hashes)
    if normalization is not None:
        out["meta"]["normalization"] = [list(n) if n else None for n in normalization]
    if model.pca is not None:
        out["pca"] = model.pca.to_json()
    return out


def model_from_json(data) -> Model:
    from .pca import PCAProjection

    if data.get("version") != MODEL_VERSION:
        raise ValueError("not a %s file (version %r)" % (MODEL_VERSION, data.get("version")))
    W = [np.array(data["W"][k], dtype=np.float64).reshape(len(data["W"][k]), -1) for k in KINDS]
    pca = PCAProjection.from_json(data["pca"]) if data.get("pca") else None
    return Model(W, np.array(data["u"], dtype=np.float64), dict(data.get("meta", {})), pca)


def classifier_to_json(clf: LinearClassifier) -> Dict:
    out = {
        "version": BASELINE_VERSION,
        "mode": clf.mode,
        "oracle": list(clf.oracle),
        "meta": dict(clf.meta),
        "W": clf.W.tolist(),
        "b": clf.b.tolist(),
    }
    if clf.pca is not None:
        out["pca"] = clf.pca.to_json()
    return out


def classifier_from_json(data) -> LinearClassifier:
    from .pca import PCAProjection

    if data.get("version") != BASELINE_VERSION:
        raise ValueError("not a %s file (version %r)" % (BASELINE_VERSION, data.get("version")))
    W = np.array(data["W"], dtype=np.float64)
    pca = PCAProjection.from_json(data["pca"]) if data.get("pca") else None
    return LinearClassifier(W.reshape(len(data["W"]), -1), np.array(data["b"], dtype=np.float64),
                            data["mode"], tuple(data.get("oracle", ())), dict(data.get("meta", {})), pca)
