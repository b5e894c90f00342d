"""Data conditioning: per-sample DC removal / norm rescaling and PCA whitening."""

import logging
from dataclasses import dataclass

import numpy as np

from depca.errors import DimensionError, ParameterError

log = logging.getLogger(__name__)

RANK_TOL = 1e-12


def remove_dc_and_normalize(X):
    """Subtract each row's mean and rescale the row to unit Euclidean norm.

    Rows that vanish after centering are dropped.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError("empty data matrix")
    Xc = X - X.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(Xc, axis=1)
    keep = norms > 1e-12 * max(1.0, float(np.max(np.abs(X))))
    if not keep.all():
        log.warning("dropping %d rows that are constant", int((~keep).sum()))
    return Xc[keep] / norms[keep, None]


@dataclass
class WhiteningTransform:
    mean: np.ndarray
    projection: np.ndarray  # d x d0
    eigenvalues: np.ndarray  # all d0, descending
    eigenvectors: np.ndarray  # d0 x d0, columns matching eigenvalues

    @property
    def d0(self):
        return self.projection.shape[1]

    @property
    def d(self):
        return self.projection.shape[0]

    @property
    def dewhitening(self):
        """d0 x d map back from whitened coordinates onto the retained subspace."""
        E = self.eigenvectors[:, : self.d]
        return E * np.sqrt(self.eigenvalues[: self.d])

    @classmethod
    def identity(cls, d):
        return cls(mean=np.zeros(d), projection=np.eye(d), eigenvalues=np.ones(d),
                   eigenvectors=np.eye(d))


def fit_whitening(X, d_keep=None):
    """PCA whitening with optional truncation to the leading ``d_keep`` directions."""
    X = np.asarray(X, dtype=float)
    T, d0 = X.shape
    if d_keep is None:
        d_keep = d0
    if not 1 <= d_keep <= d0:
        raise DimensionError(f"d_keep={d_keep} must be between 1 and {d0}")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / T
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    top = evals[0] if evals.size else 0.0
    rank = int(np.sum(evals > RANK_TOL * top)) if top > 0 else 0
    if rank < d_keep:
        raise DimensionError(
            f"covariance has numerical rank {rank} < d_keep={d_keep}; choose d_keep <= {rank}")
    proj = (evecs[:, :d_keep] / np.sqrt(evals[:d_keep])).T
    return WhiteningTransform(mean=mean, projection=proj, eigenvalues=evals, eigenvectors=evecs)


def apply_whitening(t, X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != t.d0:
        raise DimensionError(f"data dimension {X.shape[-1]} does not match transform input {t.d0}")
    return (X - t.mean) @ t.projection.T


def reconstruct(t, Z):
    """Map whitened coordinates back to the original space (retained subspace only)."""
    return Z @ t.dewhitening.T + t.mean


def unmix_to_original(t, W_hat):
    """Basis vectors (columns) of the estimated mixing in the original space.

    The full unmixing from centered data is W_hat @ projection; its
    pseudo-inverse holds the original-domain features.
    """
    W_hat = np.asarray(W_hat, dtype=float)
    if W_hat.shape[1] != t.d:
        raise DimensionError(f"W_hat has {W_hat.shape[1]} columns, transform keeps {t.d}")
    return np.linalg.pinv(W_hat @ t.projection)
