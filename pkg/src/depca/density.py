"""Unnormalized log-densities of the dependent-component model.

All functions work on the log scale and drop additive constants.
"""

import warnings

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from depca.errors import DimensionError, NumericalError, ParameterError, SingularityError
from depca.genmodel import check_sign_pattern

EXACT_ABS = "exact_abs"
LOG_COSH = "log_cosh"
SQRT_EPS = 1e-9
QUAD_RTOL = 1e-8
_LOG2 = np.log(2.0)


def log_cosh(v):
    a = np.abs(v)
    return a - _LOG2 + np.log1p(np.exp(-2.0 * a))


def nonlinearity(v):
    """G = log cosh, with first and second derivatives tanh and sech^2."""
    v = np.asarray(v, dtype=float)
    t = np.tanh(v)
    # 1 - tanh^2 loses everything for |v| > ~19; use the exponential form instead
    a = np.abs(v)
    e = np.exp(-2.0 * a)
    sech2 = 4.0 * e / (1.0 + e) ** 2
    return log_cosh(v), t, sech2


def _phi(z, smoothing):
    if smoothing == EXACT_ABS:
        return np.abs(z)
    if smoothing == LOG_COSH:
        return log_cosh(z)
    raise ParameterError(f"unknown smoothing mode {smoothing!r}")


def _as_dependency(M, d):
    M = np.asarray(M, dtype=float)
    if M.shape != (d, d):
        raise DimensionError(f"dependency matrix has shape {M.shape}, expected {(d, d)}")
    return M


def log_ptilde_s(s, M, smoothing=EXACT_ABS):
    """-sum_i m_ii phi(s_i) - sum_{i<j} m_ij phi(s_i - s_j).

    ``s`` may be a single vector or an (n, d) array of rows.
    """
    s = np.asarray(s, dtype=float)
    d = s.shape[-1]
    M = _as_dependency(M, d)
    iu, ju = np.triu_indices(d, 1)
    val = -(_phi(s, smoothing) @ np.diag(M))
    val = val - _phi(s[..., iu] - s[..., ju], smoothing) @ M[iu, ju]
    return val


def log_ptilde_x(x, W, M, smoothing=EXACT_ABS):
    W = np.asarray(W, dtype=float)
    sign, logdet = np.linalg.slogdet(W)
    if sign == 0 or not np.isfinite(logdet):
        raise SingularityError("unmixing matrix is singular")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"data dimension {x.shape[-1]} does not match W {W.shape}")
    return log_ptilde_s(x @ W.T, M, smoothing) + logdet


def g_closed_form(v, m):
    """log g(v) = -m sqrt(v), constant dropped."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ParameterError("g is only defined for v >= 0")
    return -m * np.sqrt(v)


def g_numeric(v, weight_density, with_sqrt=False, rtol=QUAD_RTOL):
    """Laplace-type transform int_0^inf [sqrt(u)] exp(-v u / 2) p(u) du.

    The half-line is mapped to (0, 1) by u = t / (1 - t) and integrated with
    adaptive Gauss-Kronrod (QUADPACK).  Returns the value itself, not its log.
    """
    if v < 0:
        raise ParameterError("g is only defined for v >= 0")

    def integrand(t):
        if t <= 0.0 or t >= 1.0:
            return 0.0
        u = t / (1.0 - t)
        jac = 1.0 / (1.0 - t) ** 2
        f = np.exp(-0.5 * v * u) * weight_density(u) * jac
        if with_sqrt:
            f *= np.sqrt(u)
        return f

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=rtol, limit=500)
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"quadrature did not converge at v={v}: {exc}") from exc
    if not np.isfinite(val) or val <= 0:
        raise NumericalError(f"quadrature returned {val} (error estimate {err}) at v={v}")
    return val


def inverse_gamma_density(shape, scale):
    """Normalized inverse-Gamma pdf as a plain callable."""
    logc = shape * np.log(scale) - gammaln(shape)

    def pdf(u):
        if u <= 0:
            return 0.0
        return np.exp(logc - (shape + 1.0) * np.log(u) - scale / u)

    return pdf


def log_ptilde_s_general(s, M, theta, smoothing=EXACT_ABS):
    """Log-density for the sign-pattern generalization of the model.

    Pair terms are m_ij sqrt(theta_ii s_i^2 + theta_jj s_j^2 + 2 theta_ij s_i s_j).
    Under log-cosh smoothing the square root becomes sqrt(z + 1e-9) and the
    diagonal |s_i| becomes log cosh(s_i).
    """
    s = np.asarray(s, dtype=float)
    d = s.shape[-1]
    M = _as_dependency(M, d)
    check_sign_pattern(theta)
    theta = np.asarray(theta, dtype=float)
    td = np.diag(theta)
    iu, ju = np.triu_indices(d, 1)
    si, sj = s[..., iu], s[..., ju]
    z = td[iu] * si**2 + td[ju] * sj**2 + 2.0 * theta[iu, ju] * si * sj
    # tolerate rounding noise from cancellation, reject real negatives
    scale = td[iu] * si**2 + td[ju] * sj**2
    if np.any(z < -1e-12 * np.maximum(scale, 1.0)):
        raise ParameterError("negative radicand in generalized density")
    z = np.maximum(z, 0.0)
    if smoothing == LOG_COSH:
        root = np.sqrt(z + SQRT_EPS)
    elif smoothing == EXACT_ABS:
        root = np.sqrt(z)
    else:
        raise ParameterError(f"unknown smoothing mode {smoothing!r}")
    val = -(_phi(s, smoothing) @ (td * np.diag(M)))
    return val - root @ M[iu, ju]
