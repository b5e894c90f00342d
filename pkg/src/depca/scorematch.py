"""Score-matching objective for the dependent-component model.

Every parameter m_q (q a flat upper-triangular index) multiplies a smoothed
absolute value of one projection a_q . x, where a_q is a row of W for
diagonal entries and the difference of two rows for pairs.  Stacking the
a_q gives D = E W with E the fixed incidence matrix from ``triu.incidence``;
all quantities below are written in terms of U = X D^T (T x p).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from depca import triu
from depca.density import nonlinearity
from depca.errors import DimensionError, ParameterError

ROW_NORM_TOL = 1e-8
PSD_FLOOR = 1e-10


@dataclass
class QuadraticForm:
    """J(m) = 0.5 m^T H m + m^T b."""

    H: np.ndarray
    b: np.ndarray

    def value(self, m):
        m = np.asarray(m, dtype=float)
        return 0.5 * m @ self.H @ m + m @ self.b

    @property
    def d(self):
        return triu.dim_from_params(self.b.size)


def _check(X, W):
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError("data matrix must be a non-empty 2-D array")
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[1] != X.shape[1]:
        raise DimensionError(f"W has shape {W.shape}, data has dimension {X.shape[1]}")
    norms = np.linalg.norm(W, axis=1)
    if np.any(np.abs(norms - 1.0) > ROW_NORM_TOL):
        warnings.warn("rows of W are not unit norm", RuntimeWarning, stacklevel=3)
    return X, W


def _m_vector(M, d):
    M = np.asarray(M, dtype=float)
    if M.ndim == 2:
        if M.shape != (d, d):
            raise DimensionError(f"dependency matrix shape {M.shape}, expected {(d, d)}")
        return triu.to_vector(M)
    if M.size != triu.n_params(d):
        raise DimensionError(f"parameter vector has {M.size} entries, expected {triu.n_params(d)}")
    return M


def feature_vectors(x, W):
    """Coefficient rows of m in psi_k and d(psi_k)/dx_k for one sample.

    Returns (gk, hk), both d x p: psi = gk @ m and dpsi = hk @ m.
    """
    W = np.asarray(W, dtype=float)
    d = W.shape[0]
    D = triu.incidence(d) @ W
    u = D @ np.asarray(x, dtype=float)
    _, g1, g2 = nonlinearity(u)
    gk = -(g1[:, None] * D).T
    hk = -(g2[:, None] * D**2).T
    return gk, hk


def assemble_quadratic(X, W):
    """(H, b) of the objective as a quadratic form in m for fixed W."""
    X, W = _check(X, W)
    T, d = X.shape
    D = triu.incidence(d) @ W
    _, tau, sig = nonlinearity(X @ D.T)
    # sum_k g_k g_k^T per sample is diag(tau) D D^T diag(tau)
    H = (D @ D.T) * (tau.T @ tau) / T
    H = 0.5 * (H + H.T)
    b = -sig.mean(axis=0) * np.sum(D**2, axis=1)
    lo = np.linalg.eigvalsh(H)[0]
    if lo < -PSD_FLOOR * max(np.trace(H), 1.0):
        raise ArithmeticError(f"assembled H is not PSD (min eigenvalue {lo:g})")
    return QuadraticForm(H=H, b=b)


def objective_J(X, W, M):
    """(1/T) sum_t sum_k [psi_k^2 / 2 + d psi_k / dx_k], evaluated per sample."""
    X, W = _check(X, W)
    T, d = X.shape
    m = _m_vector(M, d)
    D = triu.incidence(d) @ W
    _, tau, sig = nonlinearity(X @ D.T)
    psi = -(tau * m) @ D
    dpsi = -(sig * m) @ np.sum(D**2, axis=1)
    return float(np.mean(0.5 * np.sum(psi**2, axis=1) + dpsi))


def objective_and_grad(X, W, M):
    """Objective value and its gradient with respect to W."""
    X, W = _check(X, W)
    T, d = X.shape
    m = _m_vector(M, d)
    E = triu.incidence(d)
    D = E @ W
    _, tau, sig = nonlinearity(X @ D.T)
    nrm = np.sum(D**2, axis=1)
    V = (tau * m) @ D  # = -psi, T x d
    J = float(np.mean(0.5 * np.sum(V**2, axis=1) - (sig * m) @ nrm))

    # quadratic part: d/dD_q of 0.5|V|^2, tanh' = sech^2
    P = V @ D.T
    gD = m[:, None] * (tau.T @ V)
    gD += m[:, None] * ((P * sig).T @ X)
    # linear part: -m_q sech^2(u_q) |D_q|^2, (sech^2)' = -2 sech^2 tanh
    gD -= 2.0 * (m * sig.sum(axis=0))[:, None] * D
    gD += 2.0 * (m * nrm)[:, None] * ((sig * tau).T @ X)
    return J, E.T @ gD / T


def grad_W(X, W, M):
    return objective_and_grad(X, W, M)[1]
