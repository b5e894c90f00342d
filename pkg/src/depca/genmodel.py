"""Hierarchical generative model for dependent non-Gaussian sources.

Weights u_ij are non-negative random variables, the precision matrix of the
sources is the Laplacian of the weighted graph they define, and the sources
are conditionally Gaussian given that precision.  Observations are a linear
mixture of the (standardized) sources.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from depca.errors import ParameterError, SingularityError

MAX_MIXING_DRAWS = 10
MIXING_COND_LIMIT = 1e12


def sample_inverse_gamma(shape, scale, n, rng):
    """Draw ``n`` inverse-Gamma variates with density ~ x**(-shape-1) exp(-scale/x).

    The Gamma draw uses numpy's Marsaglia-Tsang sampler; the reciprocal of a
    Gamma(shape, rate=scale) variate is inverse-Gamma(shape, scale).
    """
    if not (shape > 0 and scale > 0):
        raise ParameterError(f"inverse-Gamma needs shape > 0 and scale > 0, got {shape}, {scale}")
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return 1.0 / rng.gamma(shape, 1.0 / scale, size=n)


def eq16_parameters(m_diag, m_off=None):
    """(shape, scale) pairs whose Laplace transforms give exp(-m sqrt(v)).

    Diagonal weights carry an extra sqrt(u) factor in the marginal integral,
    hence shape 1 versus shape 1/2 off the diagonal.
    """
    diag = (1.0, m_diag**2 / 2.0)
    if m_off is None:
        return diag, None
    return diag, (0.5, m_off**2 / 2.0)


@dataclass
class GenerationSpec:
    """Declarative description of a synthetic data set.

    ``pattern`` holds 0-based pairs (i, j), i < j, whose weights are drawn
    from the off-diagonal class; all other off-diagonal weights are zero.
    """

    d: int
    T: int
    diag_shape: float = 2.0
    diag_scale: float = 1.0
    off_shape: float = 2.0
    off_scale: float = 1.0 / 3.0
    pattern: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.pattern = sorted({tuple(sorted((int(i), int(j)))) for i, j in self.pattern})
        self.validate()

    def validate(self):
        if self.d < 2:
            raise ParameterError(f"d must be >= 2, got {self.d}")
        if self.T < 1:
            raise ParameterError(f"T must be >= 1, got {self.T}")
        if not (self.diag_shape > 0 and self.diag_scale > 0):
            raise ParameterError("diagonal shape and scale must be positive")
        if self.pattern and not (self.off_shape > 0 and self.off_scale > 0):
            raise ParameterError("off-diagonal shape and scale must be positive")
        for i, j in self.pattern:
            if i == j or not (0 <= i < self.d and 0 <= j < self.d):
                raise ParameterError(f"invalid pattern pair ({i}, {j}) for d={self.d}")

    @classmethod
    def independent(cls, d=10, T=20000, seed=0):
        return cls(d=d, T=T, diag_shape=2.0, diag_scale=1.0, seed=seed)

    @classmethod
    def block(cls, d=10, T=20000, block=(0, 1, 2), seed=0):
        pattern = [(i, j) for a, i in enumerate(block) for j in block[a + 1:]]
        return cls(d=d, T=T, diag_shape=2.0, diag_scale=1.0,
                   off_shape=2.0, off_scale=1.0 / 3.0, pattern=pattern, seed=seed)

    @classmethod
    def from_dependency(cls, M, T, seed=0):
        """Spec whose weight laws reproduce exp(-m_ij sqrt(v)) nonlinearities.

        Only valid when all diagonals share one value and all active
        off-diagonals share one value.
        """
        M = np.asarray(M, dtype=float)
        d = M.shape[0]
        diag = np.unique(np.diag(M))
        iu = np.triu_indices(d, 1)
        active = [(int(i), int(j)) for i, j in zip(*iu) if M[i, j] > 0]
        off = np.unique(M[iu][M[iu] > 0])
        if diag.size != 1 or off.size > 1:
            raise ParameterError("from_dependency needs one diagonal value and one off-diagonal value")
        (ds, dsc), offp = eq16_parameters(diag[0], off[0] if off.size else None)
        os_, osc = offp if offp is not None else (0.5, 1.0)
        return cls(d=d, T=T, diag_shape=ds, diag_scale=dsc,
                   off_shape=os_, off_scale=osc, pattern=active, seed=seed)


def _weights_batch(spec, n, rng):
    d = spec.d
    U = np.zeros((n, d, d))
    diag = sample_inverse_gamma(spec.diag_shape, spec.diag_scale, n * d, rng)
    U[:, np.arange(d), np.arange(d)] = diag.reshape(n, d)
    for i, j in spec.pattern:
        u = sample_inverse_gamma(spec.off_shape, spec.off_scale, n, rng)
        U[:, i, j] = u
        U[:, j, i] = u
    return U


def sample_weights(spec, rng):
    return _weights_batch(spec, 1, rng)[0]


def check_weights(u):
    u = np.asarray(u)
    if not np.array_equal(u, u.T):
        raise ParameterError("weight matrix is not symmetric")
    if np.any(u < 0) or np.any(np.diag(u) <= 0):
        raise ParameterError("weights must be non-negative with positive diagonal")


def build_precision(u):
    """Graph Laplacian of the weights, with u_ii added to the diagonal."""
    u = np.asarray(u, dtype=float)
    lam = -u.copy()
    idx = np.arange(u.shape[-1])
    lam[..., idx, idx] = u.sum(axis=-1)
    return lam


def check_sign_pattern(theta):
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]
    if not np.array_equal(theta, theta.T):
        raise ParameterError("sign pattern is not symmetric")
    dg = np.diag(theta)
    if np.any(dg <= 0):
        raise ParameterError("sign pattern diagonal must be positive")
    off = theta[~np.eye(d, dtype=bool)]
    if not np.all(np.isin(off, (-1.0, 0.0, 1.0))):
        raise ParameterError("off-diagonal sign entries must be in {-1, 0, 1}")
    if np.any(np.abs(theta) > dg[:, None]):
        raise ParameterError("need theta_ii >= |theta_ij| for every row")


def build_precision_general(u, theta):
    """Omega * Theta (entrywise), with Omega = weights plus row sums on the diagonal."""
    check_sign_pattern(theta)
    u = np.asarray(u, dtype=float)
    omega = u.copy()
    idx = np.arange(u.shape[-1])
    omega[..., idx, idx] = u.sum(axis=-1)
    return omega * np.asarray(theta, dtype=float)


def is_strictly_diagonally_dominant(lam):
    lam = np.asarray(lam)
    dg = np.abs(np.diag(lam))
    off = np.abs(lam).sum(axis=1) - dg
    return bool(np.all(dg > off))


def _cholesky(lam):
    try:
        return np.linalg.cholesky(lam)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("precision matrix is not positive definite") from exc


def sample_sources(lam, T, rng):
    """T i.i.d. zero-mean Gaussian rows with precision ``lam``."""
    L = _cholesky(np.asarray(lam, dtype=float))
    z = rng.standard_normal((L.shape[0], T))
    # lam = L L^T, so s = L^{-T} z has covariance lam^{-1}
    return solve_triangular(L.T, z, lower=False).T


def sample_hierarchical(spec, rng, T=None):
    """One fresh weight matrix, precision and source vector per sample."""
    T = spec.T if T is None else T
    U = _weights_batch(spec, T, rng)
    L = _cholesky(build_precision(U))
    z = rng.standard_normal((T, spec.d, 1))
    return np.linalg.solve(np.swapaxes(L, 1, 2), z)[..., 0]


def standardize(S):
    S = S - S.mean(axis=0)
    return S / S.std(axis=0)


def draw_mixing(d, rng):
    for _ in range(MAX_MIXING_DRAWS):
        A = rng.standard_normal((d, d))
        if np.linalg.cond(A) < MIXING_COND_LIMIT:
            return A
    raise SingularityError(f"no well-conditioned mixing matrix in {MAX_MIXING_DRAWS} draws")


@dataclass
class Dataset:
    X: np.ndarray
    A: np.ndarray
    S: np.ndarray
    per_sample_weights: bool = True


def generate_dataset(spec, rng=None):
    """Sources, mixing matrix and observations (rows are samples, X = S A^T)."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    S = standardize(sample_hierarchical(spec, rng))
    A = draw_mixing(spec.d, rng)
    return Dataset(X=S @ A.T, A=A, S=S)
