"""Principal component projection of image features."""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_COMPONENTS = 100


class PCAError(ValueError):
    pass


@dataclass
class PCAProjection:
    """Mean-centred projection onto the leading covariance eigenvectors.

    Rows of ``components`` beyond ``n_valid`` are zero padding, used when the
    data cannot support the requested number of components.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    n_valid: int

    @property
    def padded(self):
        return self.n_valid < len(self.components)

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) @ self.components.T

    def to_json(self):
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "n_valid": self.n_valid,
        }

    @classmethod
    def from_json(cls, data):
        comps = np.array(data["components"], dtype=np.float64)
        mean = np.array(data["mean"], dtype=np.float64)
        return cls(mean, comps.reshape(len(data["components"]), len(mean)),
                   np.array(data["explained_variance"], dtype=np.float64), int(data["n_valid"]))


def pca_fit(X, n_components=DEFAULT_COMPONENTS) -> PCAProjection:
    """Fit a projection from the sample covariance of ``X`` (rows are samples).

    Each component is signed so that its largest-magnitude coordinate is
    positive. With fewer than ``n_components + 1`` samples, or fewer input
    dimensions than ``n_components``, the missing components are zero rows.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise PCAError("need a 2-D array with at least two rows")
    n, d = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise PCAError("all input vectors are identical; variance is zero")
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order].T
    n_valid = min(n_components, d, n - 1)
    if n_valid < n_components:
        log.warning("only %d of %d principal components are supported by the data; "
                    "padding with zeros", n_valid, n_components)
    comps = np.zeros((n_components, d))
    var = np.zeros(n_components)
    comps[:n_valid] = evecs[:n_valid]
    var[:n_valid] = evals[:n_valid]
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(n_components), pivot])
    signs[signs == 0] = 1.0
    comps *= signs[:, None]
    return PCAProjection(mean, comps, var, n_valid)


def pca_apply(p: PCAProjection, X):
    return p.apply(X)
