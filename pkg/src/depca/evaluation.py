"""Quantitative evaluation of estimated unmixing and dependency matrices."""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import multivariate_normal

from depca.density import EXACT_ABS, log_ptilde_s
from depca.errors import DimensionError, GridError, ParameterError

log = logging.getLogger(__name__)

KL_FLOOR = 1e-300
DIAG_FLOOR = 1e-12


def performance_matrix(W_hat, A_true, whitening=None):
    """P = W_hat V A, where V is the whitening map (identity if omitted).

    ``whitening`` may be a WhiteningTransform or a plain d x d0 matrix.
    """
    W_hat = np.asarray(W_hat, dtype=float)
    A = np.asarray(A_true, dtype=float)
    if whitening is not None:
        V = getattr(whitening, "projection", whitening)
        A = np.asarray(V, dtype=float) @ A
    if W_hat.shape[1] != A.shape[0]:
        raise DimensionError(f"W_hat {W_hat.shape} cannot multiply mixing {A.shape}")
    return W_hat @ A


class Matching(NamedTuple):
    perm: np.ndarray  # estimated component i <-> true source perm[i]
    signs: np.ndarray

    def align_rows(self, P):
        """Reorder and re-sign rows so that row perm[i] holds signs[i] * P[i]."""
        P = np.asarray(P, dtype=float)
        out = np.empty_like(P)
        out[self.perm] = self.signs[:, None] * P
        return out

    def align_dependency(self, M):
        """Re-index a dependency matrix from estimated to true component order."""
        M = np.asarray(M, dtype=float)
        out = np.empty_like(M)
        out[np.ix_(self.perm, self.perm)] = M
        return out

    def align_sources(self, S_hat):
        """Columns of estimated sources in true order, with signs fixed."""
        S_hat = np.asarray(S_hat, dtype=float)
        out = np.empty_like(S_hat)
        out[:, self.perm] = S_hat * self.signs
        return out


def match_permutation(P):
    """Assignment maximizing sum_i |P[i, perm[i]]|, plus sign flips."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError("performance matrix must be square")
    rows, cols = linear_sum_assignment(-np.abs(P))
    perm = np.empty(P.shape[0], dtype=int)
    perm[rows] = cols
    signs = np.sign(P[np.arange(P.shape[0]), perm])
    signs[signs == 0] = 1.0
    return Matching(perm=perm, signs=signs)


def amari_index(P):
    """Normalized Amari index in [0, 1]; 0 for a scaled signed permutation."""
    A = np.abs(np.asarray(P, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d) or d < 2:
        raise DimensionError("Amari index needs a square matrix with d >= 2")
    rmax = A.max(axis=1)
    cmax = A.max(axis=0)
    if np.any(rmax == 0) or np.any(cmax == 0):
        raise ParameterError("performance matrix has an all-zero row or column")
    rows = np.sum(A.sum(axis=1) / rmax - 1.0)
    cols = np.sum(A.sum(axis=0) / cmax - 1.0)
    return float((rows + cols) / (2.0 * d * (d - 1)))


def normalize_dependency(M_hat):
    """m_ij / sqrt(m_ii m_jj), with unit diagonal.

    Components whose diagonal is (numerically) zero get zero off-diagonals.
    """
    M = np.asarray(M_hat, dtype=float)
    dg = np.diag(M).copy()
    bad = dg < DIAG_FLOOR
    if bad.any():
        log.warning("dependency diagonal below %g for components %s", DIAG_FLOOR,
                    np.flatnonzero(bad).tolist())
    root = np.sqrt(np.where(bad, 1.0, dg))
    out = M / np.outer(root, root)
    out[bad, :] = 0.0
    out[:, bad] = 0.0
    np.fill_diagonal(out, 1.0)
    return out


def reference_matrix(spec):
    """Reference normalized dependency matrix implied by a generation spec.

    Square roots of the inverse-Gamma scales play the role of m'; off-diagonal
    entries are divided by the root of the product of the two full row sums.
    """
    d = spec.d
    Mp = np.diag(np.full(d, np.sqrt(spec.diag_scale)))
    if not spec.pattern:
        return np.eye(d)
    for i, j in spec.pattern:
        Mp[i, j] = Mp[j, i] = np.sqrt(spec.off_scale)
    rs = Mp.sum(axis=1)
    ref = Mp / np.sqrt(np.outer(rs, rs))
    np.fill_diagonal(ref, 1.0)
    return ref


def error_M(M_hat, M_ref, matching=None):
    """Frobenius distance between the reference and the normalized, aligned estimate."""
    M_hat = np.asarray(M_hat, dtype=float)
    M_ref = np.asarray(M_ref, dtype=float)
    if M_hat.shape != M_ref.shape:
        raise DimensionError(f"shapes differ: {M_hat.shape} vs {M_ref.shape}")
    Mn = normalize_dependency(M_hat)
    if matching is not None:
        Mn = matching.align_dependency(Mn)
    return float(np.linalg.norm(M_ref - Mn, "fro"))


def off_diagonal_mass(M_norm):
    """sum_{i<j} of a normalized dependency matrix."""
    M_norm = np.asarray(M_norm)
    return float(np.sum(np.triu(M_norm, 1)))


def correlation_matrices(S):
    """Pearson correlations of the columns and of the squared columns."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] < 2:
        raise ParameterError("need at least two samples")
    for Z in (S, S**2):
        if np.any(Z.std(axis=0) == 0):
            raise ParameterError("a column has zero variance")
    return np.corrcoef(S, rowvar=False), np.corrcoef(S**2, rowvar=False)


class Measures(NamedTuple):
    ang: float
    kl: float
    sq: float


def comparison_measures(p, q):
    """Cosine, KL(p || q) and p-weighted squared distance between bin masses."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    ang = float(p @ q / np.sqrt((p @ p) * (q @ q)))
    nz = p > 0
    kl = float(np.sum(p[nz] * (np.log(p[nz]) - np.log(np.maximum(q[nz], KL_FLOOR)))))
    sq = float(np.sum((p - q) ** 2 * p))
    return Measures(ang, kl, sq)


@dataclass
class Histogram2D:
    edges: tuple
    counts: np.ndarray
    mass: np.ndarray

    @property
    def centers(self):
        ex, ey = self.edges
        return 0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1])

    def grid_points(self):
        cx, cy = self.centers
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


def histogram2d(S2, bins=100, quantiles=(0.001, 0.999)):
    S2 = np.asarray(S2, dtype=float)
    if S2.ndim != 2 or S2.shape[1] != 2:
        raise DimensionError("density comparison needs two-dimensional samples")
    lo = np.quantile(S2, quantiles[0], axis=0)
    hi = np.quantile(S2, quantiles[1], axis=0)
    edges = tuple(np.linspace(lo[a], hi[a], bins + 1) for a in range(2))
    counts, _, _ = np.histogram2d(S2[:, 0], S2[:, 1], bins=edges)
    total = counts.sum()
    if total == 0:
        raise GridError("no samples fall inside the histogram range")
    # a grid far too fine for the sample shows up as holes in the bulk
    inner = [(np.quantile(S2[:, a], 0.25) <= c) & (c <= np.quantile(S2[:, a], 0.75))
             for a, c in enumerate((0.5 * (e[1:] + e[:-1]) for e in edges))]
    core = counts[np.ix_(inner[0], inner[1])]
    if core.size and np.mean(core == 0) > 0.5:
        raise GridError(f"{np.mean(core == 0):.0%} of the bins in the central region are empty; "
                        "use fewer bins or more samples")
    return Histogram2D(edges=edges, counts=counts, mass=counts / total)


def grid_masses(logdens, shape):
    """Normalize log-density values on equal-area bin centers to masses."""
    v = np.asarray(logdens, dtype=float)
    w = np.exp(v - np.max(v))
    return (w / w.sum()).reshape(shape)


@dataclass
class DensityComparison:
    ang: float
    kl: float
    sq: float
    baselines: dict = field(default_factory=dict)
    histogram: Histogram2D = None

    @property
    def approx(self):
        return Measures(self.ang, self.kl, self.sq)


def density_comparison(S2, M, bins=100, quantiles=(0.001, 0.999)):
    """Compare the model density with a histogram of S2, against Gaussian and Laplace fits."""
    S2 = np.asarray(S2, dtype=float)
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2):
        raise DimensionError("density comparison is two-dimensional")
    hist = histogram2d(S2, bins, quantiles)
    pts = hist.grid_points()
    shape = hist.mass.shape
    p = hist.mass

    q_model = grid_masses(log_ptilde_s(pts, M, EXACT_ABS), shape)

    mu = S2.mean(axis=0)
    cov = np.cov(S2, rowvar=False, bias=True)
    q_gauss = grid_masses(multivariate_normal(mu, cov).logpdf(pts), shape)

    b = np.sqrt(S2.var(axis=0) / 2.0)
    q_lap = grid_masses(-np.sum(np.abs(pts - mu) / b + np.log(2 * b), axis=1), shape)

    ang, kl, sq = comparison_measures(p, q_model)
    return DensityComparison(
        ang=ang, kl=kl, sq=sq,
        baselines={"gauss": comparison_measures(p, q_gauss),
                   "laplace": comparison_measures(p, q_lap)},
        histogram=hist)


class Embedding(NamedTuple):
    distance: np.ndarray
    coords: np.ndarray
    eigenvalues: np.ndarray


def mds_distance(M_hat):
    Mn = normalize_dependency(M_hat)
    D = 1.0 - np.sqrt(np.clip(Mn, 0.0, None))
    np.fill_diagonal(D, 0.0)
    return D


def mds_embedding(M_hat, n_dims=2):
    """Classical MDS of the distances 1 - sqrt(normalized m_ij)."""
    D = mds_distance(M_hat)
    n = D.shape[0]
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (D**2) @ J
    evals, evecs = np.linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(evals)[::-1][:n_dims]
    top = evals[order]
    if np.any(top < 0):
        log.warning("clamping negative MDS eigenvalues %s to zero", top[top < 0])
    top = np.clip(top, 0.0, None)
    coords = evecs[:, order] * np.sqrt(top)
    return Embedding(distance=D, coords=coords, eigenvalues=evals[::-1])
