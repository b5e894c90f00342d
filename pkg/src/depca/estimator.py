"""Alternating estimation of the unmixing matrix and the dependency matrix.

The unmixing matrix is initialized by maximum-likelihood ICA with a log-cosh
contrast under a unit-row-norm constraint.  The dependency parameters are
then fitted by the constrained QP, and the two are refined alternately: one
adaptive gradient step on W, then an exact QP solve for m.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import ortho_group

from depca import triu
from depca.density import log_cosh
from depca.errors import EstimationError, NumericalError, ParameterError
from depca.qpsolve import solve_dependency_qp
from depca.scorematch import assemble_quadratic, objective_and_grad, objective_J

log = logging.getLogger(__name__)

MAX_HALVINGS = 20
MAX_SIGN_ROUNDS = 3
WHITE_TOL = 0.05
# E[log cosh(n)] for n ~ N(0, 1), and its standard deviation
GAUSS_LOGCOSH_MEAN = 0.3745672075
GAUSS_LOGCOSH_STD = 0.4356230586
# two-sided 95% band for the sample mean of log cosh under Gaussianity
GAUSS_Z = 1.96


@dataclass
class EstimatorOptions:
    restarts: int = 10
    max_outer_iters: int = 500
    convergence_tol: float = 1e-6
    initial_step: float = 1.0
    ica_max_iters: int = 1000
    ica_tol: float = 1e-8
    minibatch_size: Optional[int] = None
    lambda_sparsity: float = 0.0
    # number of best ICA restarts (by J0) refined by the alternation; None = all
    refine: Optional[int] = None
    resolve_signs: bool = True
    threads: int = 1
    seed: int = 0

    def validate(self):
        if self.restarts < 1:
            raise ParameterError("restarts must be >= 1")
        if self.max_outer_iters < 0 or self.ica_max_iters < 0:
            raise ParameterError("iteration caps must be non-negative")
        if self.convergence_tol < 0 or self.ica_tol < 0:
            raise ParameterError("tolerances must be non-negative")
        if not self.initial_step > 0:
            raise ParameterError("initial_step must be positive")
        if self.lambda_sparsity < 0:
            raise ParameterError("lambda_sparsity must be non-negative")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ParameterError("minibatch_size must be positive")
        if self.refine is not None and self.refine < 1:
            raise ParameterError("refine must be >= 1")


class StepResult(NamedTuple):
    step: float
    value: float
    improved: bool


def adaptive_step(prev_step, evaluate, current):
    """Pick among 2*mu, mu and mu/2 the step with the smallest objective.

    ``evaluate(step)`` returns the objective after taking ``step``; ``current``
    is the objective before it.  If no candidate improves on ``current`` the
    step keeps halving (up to 20 more times); failure is reported through
    ``improved=False``.
    """
    if not prev_step > 0:
        raise ParameterError("step size must be positive")
    cands = (2.0 * prev_step, prev_step, 0.5 * prev_step)
    vals = [evaluate(mu) for mu in cands]
    k = int(np.nanargmin(vals)) if not np.all(np.isnan(vals)) else 2
    if vals[k] < current:
        return StepResult(cands[k], vals[k], True)
    mu = cands[2]
    for _ in range(MAX_HALVINGS):
        mu *= 0.5
        v = evaluate(mu)
        if v < current:
            return StepResult(mu, v, True)
    return StepResult(mu, current, False)


def normalize_rows(W):
    return W / np.linalg.norm(W, axis=1, keepdims=True)


def ica_objective(X, W):
    sign, logdet = np.linalg.slogdet(W)
    if sign == 0:
        return np.inf
    return float(np.mean(np.sum(log_cosh(X @ W.T), axis=1)) - logdet)


def ica_gradient(X, W):
    return np.tanh(X @ W.T).T @ X / X.shape[0] - np.linalg.inv(W).T


def _check_white(X):
    C = np.cov(X, rowvar=False, bias=True)
    if np.max(np.abs(C - np.eye(X.shape[1]))) > WHITE_TOL:
        warnings.warn("data do not look whitened (covariance differs from identity)",
                      RuntimeWarning, stacklevel=3)


def _ica_single(X, W0, opts):
    W = normalize_rows(W0)
    J = ica_objective(X, W)
    step = opts.initial_step
    for _ in range(opts.ica_max_iters):
        G = ica_gradient(X, W)
        res = adaptive_step(step, lambda mu: ica_objective(X, normalize_rows(W - mu * G)), J)
        if not res.improved:
            break
        W = normalize_rows(W - res.step * G)
        step = res.step
        rel = abs(J - res.value) / max(abs(J), 1e-300)
        J = res.value
        if rel < opts.ica_tol:
            break
    return W, J


def gaussian_components(X, W):
    """Indices of estimated components indistinguishable from Gaussian by E[log cosh]."""
    Y = X @ W.T
    Y = Y / Y.std(axis=0)
    gap = np.abs(log_cosh(Y).mean(axis=0) - GAUSS_LOGCOSH_MEAN)
    se = GAUSS_LOGCOSH_STD / np.sqrt(X.shape[0])
    return np.flatnonzero(gap < GAUSS_Z * se)


@dataclass
class ICAResult:
    W: np.ndarray
    objective: float
    restart_objectives: np.ndarray
    gaussian_components: np.ndarray

    @property
    def identifiable(self):
        return self.gaussian_components.size <= 1


def _initial_matrices(d, n, rng):
    seeds = rng.integers(0, 2**63 - 1, size=n)
    return [ortho_group.rvs(d, random_state=np.random.default_rng(int(s))) if d > 1
            else np.ones((1, 1)) for s in seeds]


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def ica_init(X, opts=None, rng=None):
    """Best (smallest J0) of ``opts.restarts`` unit-norm ML-ICA runs."""
    opts = opts or EstimatorOptions()
    opts.validate()
    rng = np.random.default_rng(opts.seed) if rng is None else rng
    X = np.asarray(X, dtype=float)
    _check_white(X)
    inits = _initial_matrices(X.shape[1], opts.restarts, rng)
    runs = _map(lambda W0: _ica_single(X, W0, opts), inits, opts.threads)
    objs = np.array([j for _, j in runs])
    if not np.any(np.isfinite(objs)):
        raise EstimationError("all ICA restarts diverged")
    best = int(np.nanargmin(objs))
    W = runs[best][0]
    gauss = gaussian_components(X, W)
    res = ICAResult(W=W, objective=float(objs[best]), restart_objectives=objs,
                    gaussian_components=gauss)
    if not res.identifiable:
        warnings.warn(f"{gauss.size} estimated components look Gaussian; "
                      "the unmixing is not identifiable", RuntimeWarning, stacklevel=2)
    return res


@dataclass
class EstimationResult:
    W_hat: np.ndarray
    M_hat: np.ndarray
    objective_trace: np.ndarray
    restart_objectives: np.ndarray
    converged: bool
    # ICA baseline: best restart by J0, with its QP-fitted dependency matrix
    W_ica: np.ndarray = None
    M_ica: np.ndarray = None
    ica_objectives: np.ndarray = field(default=None)

    @property
    def A_hat(self):
        return np.linalg.inv(self.W_hat)


def _fit_m(X, W, lam):
    sol = solve_dependency_qp(assemble_quadratic(X, W), W.shape[0], lam)
    return sol.m


def _penalized(X, W, m, lam):
    return objective_J(X, W, m) + lam * float(np.sum(m))


def _profile(X, W, lam):
    q = assemble_quadratic(X, W)
    sol = solve_dependency_qp(q, W.shape[0], lam)
    return q.value(sol.m) + lam * float(np.sum(sol.m)), sol.m


def resolve_signs(X, W, lam=0.0, max_passes=None):
    """Greedy row-sign flips that lower min_m J(m | W).

    The pair terms |s_i - s_j| only model positive dependencies, so a row
    estimated with the wrong sign hides its dependencies; no gradient step
    on the unit sphere can undo that.
    """
    W = W.copy()
    d = W.shape[0]
    best, m = _profile(X, W, lam)
    for _ in range(max_passes or d):
        changed = False
        for i in range(d):
            W[i] = -W[i]
            val, m_i = _profile(X, W, lam)
            if val < best - 1e-12 * max(abs(best), 1.0):
                best, m, changed = val, m_i, True
            else:
                W[i] = -W[i]
        if not changed:
            break
    return W, m


def _alternate(X, W, m, opts, rng):
    """Algorithm loop from a given (W, m); returns W, m, trace, converged."""
    lam = opts.lambda_sparsity
    T = X.shape[0]
    batch = opts.minibatch_size if opts.minibatch_size and opts.minibatch_size < T else None
    trace = [_penalized(X, W, m, lam)]
    step = opts.initial_step
    converged = opts.max_outer_iters == 0
    for _ in range(opts.max_outer_iters):
        Xb = X[np.sort(rng.choice(T, batch, replace=False))] if batch else X
        J, G = objective_and_grad(Xb, W, m)
        if not (np.isfinite(J) and np.all(np.isfinite(G))):
            raise NumericalError(f"non-finite objective or gradient (J={J})")
        J += lam * float(np.sum(m))
        res = adaptive_step(step, lambda mu: _penalized(Xb, normalize_rows(W - mu * G), m, lam), J)
        if res.improved:
            W = normalize_rows(W - res.step * G)
            step = res.step
        m = _fit_m(Xb, W, lam)
        J_new = _penalized(Xb, W, m, lam) if batch else _penalized(X, W, m, lam)
        prev = trace[-1]
        trace.append(J_new)
        if not res.improved:
            converged = True
            break
        if abs(prev - J_new) <= opts.convergence_tol * max(abs(prev), 1e-300):
            converged = True
            break
    return W, m, np.array(trace), converged


def estimate(X, opts=None, rng=None):
    """Estimate W and M from whitened data (rows are samples)."""
    opts = opts or EstimatorOptions()
    opts.validate()
    rng = np.random.default_rng(opts.seed) if rng is None else rng
    X = np.asarray(X, dtype=float)
    T, d = X.shape
    if T < d:
        raise ParameterError(f"need at least d={d} samples, got {T}")
    _check_white(X)
    lam = opts.lambda_sparsity

    inits = _initial_matrices(d, opts.restarts, rng)
    ica_runs = _map(lambda W0: _ica_single(X, W0, opts), inits, opts.threads)
    ica_objs = np.array([j for _, j in ica_runs])
    if not np.any(np.isfinite(ica_objs)):
        raise EstimationError("all ICA restarts diverged")
    order = np.argsort(ica_objs, kind="stable")
    n_refine = opts.restarts if opts.refine is None else min(opts.refine, opts.restarts)
    chosen = [int(k) for k in order[:n_refine]]
    run_seeds = rng.integers(0, 2**63 - 1, size=len(chosen))

    W_ica = ica_runs[chosen[0]][0]
    M_ica = triu.to_matrix(_fit_m(X, W_ica, lam))

    def refine(item):
        k, seed = item
        run_rng = np.random.default_rng(int(seed))
        W = ica_runs[k][0]
        if not opts.resolve_signs:
            return _alternate(X, W, _fit_m(X, W, lam), opts, run_rng)
        W, m = resolve_signs(X, W, lam)
        W, m, trace, converged = _alternate(X, W, m, opts, run_rng)
        # sign preferences are clearer once W has moved off the ICA solution
        for _ in range(MAX_SIGN_ROUNDS):
            W_f, m_f = resolve_signs(X, W, lam)
            if np.array_equal(W_f, W):
                break
            W, m, more, converged = _alternate(X, W_f, m_f, opts, run_rng)
            trace = np.concatenate([trace, more])
        return W, m, trace, converged

    runs = _map(refine, list(zip(chosen, run_seeds)), opts.threads)
    finals = np.array([_penalized(X, W, m, lam) for W, m, _, _ in runs])
    best = int(np.argmin(finals))
    W, m, trace, converged = runs[best]
    log.info("restart objectives %s, best %d", finals, best)
    return EstimationResult(
        W_hat=W, M_hat=triu.to_matrix(m), objective_trace=trace,
        restart_objectives=finals, converged=converged,
        W_ica=W_ica, M_ica=M_ica, ica_objectives=ica_objs)
