"""Constrained quadratic program for the dependency parameters.

minimize 0.5 m^T H m + m^T (b + lam 1)
subject to m_ij >= 0 for i <= j and sum_{j != i} m_ij <= m_ii for every i.

The feasible set is a simplicial cone.  With z holding the off-diagonal m_ij
and the row slacks r_i = m_ii - sum_{j != i} m_ij, m = B z and the
constraints become z >= 0.  The reduced problem is solved by a primal
active-set method (Lawson-Hanson style) that keeps z feasible throughout.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from depca import triu
from depca.errors import FeasibilityError, ParameterError

KKT_TOL = 1e-6
FEAS_TOL = 1e-10
RIDGE_TRIGGER = 1e-12
RIDGE_SIZE = 1e-10


@dataclass
class QPSolution:
    m: np.ndarray
    kkt_residual: float
    iterations: int
    status: str
    objective_trace: list = field(default_factory=list)
    ridge: float = 0.0

    @property
    def M(self):
        return triu.to_matrix(self.m)


def cone_basis(d):
    """p x p matrix B with m = B z, z = (pair entries, row slacks) in flat order."""
    rows, cols = triu.pairs(d)
    p = rows.size
    B = np.eye(p)
    diag_q = {i: triu.flat_index(i, i, d) for i in range(d)}
    for q in range(p):
        i, j = rows[q], cols[q]
        if i != j:
            B[diag_q[i], q] = 1.0
            B[diag_q[j], q] = 1.0
    return B


def constraint_matrix(d):
    """Stacked G with G m <= 0: -I (non-negativity) then one row-dominance row per i."""
    rows, cols = triu.pairs(d)
    p = rows.size
    C = np.zeros((d, p))
    for q in range(p):
        i, j = rows[q], cols[q]
        if i == j:
            C[i, q] = -1.0
        else:
            C[i, q] = 1.0
            C[j, q] = 1.0
    return np.vstack([-np.eye(p), C])


def constraint_violations(m, d, tol=FEAS_TOL):
    """Human-readable list of violated constraints."""
    m = np.asarray(m, dtype=float)
    G = constraint_matrix(d)
    vals = G @ m
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    rows, cols = triu.pairs(d)
    p = rows.size
    out = []
    for k in np.flatnonzero(vals > tol * scale):
        if k < p:
            out.append(f"m[{rows[k]},{cols[k]}] = {m[k]:.3g} < 0")
        else:
            out.append(f"row {k - p}: off-diagonal sum exceeds m_ii by {vals[k]:.3g}")
    return out


def kkt_residual(q, d, lam, m):
    """Stationarity plus complementarity violation at a feasible m.

    Multipliers of the (nearly) active constraints are recovered by
    non-negative least squares.
    """
    m = np.asarray(m, dtype=float)
    bad = constraint_violations(m, d)
    if bad:
        raise FeasibilityError("infeasible m: " + "; ".join(bad))
    g = q.H @ m + q.b + lam
    G = constraint_matrix(d)
    vals = G @ m
    scale = max(1.0, float(np.max(np.abs(m))))
    active = vals >= -1e-8 * scale
    if not active.any():
        return float(np.max(np.abs(g)))
    Ga = G[active]
    mu, _ = nnls(Ga.T, -g)
    stat = Ga.T @ mu + g
    comp = np.max(mu * np.abs(vals[active]))
    return float(np.max(np.abs(stat)) + comp)


def _active_set(Q, c, max_iter, tol):
    """min 0.5 z^T Q z + c^T z over z >= 0, Q positive definite."""
    p = c.size
    z = np.zeros(p)
    free = np.zeros(p, dtype=bool)
    trace = [0.0]
    it = 0
    status = "optimal"
    while True:
        g = Q @ z + c
        cand = np.flatnonzero(~free & (g < -tol))
        if cand.size == 0:
            break
        if it >= max_iter:
            status = "max_iter"
            break
        k = cand[np.argmin(g[cand])]
        free[k] = True
        while True:
            it += 1
            F = np.flatnonzero(free)
            y = np.zeros(p)
            y[F] = np.linalg.solve(Q[np.ix_(F, F)], -c[F])
            if np.all(y[F] > 0):
                z = y
                break
            neg = F[y[F] <= 0]
            den = z[neg] - y[neg]
            ratios = np.where(den > 0, z[neg] / np.where(den > 0, den, 1.0), 0.0)
            alpha = float(np.min(ratios))
            z = z + alpha * (y - z)
            drop = neg[ratios <= alpha]
            z[drop] = 0.0
            z[z < 0] = 0.0
            free[drop] = False
            if not free.any() or it >= max_iter:
                break
        trace.append(0.5 * z @ Q @ z + c @ z)
        if it >= max_iter:
            status = "max_iter"
            break
    return z, it, status, trace


def solve_dependency_qp(q, d, lam=0.0, tol=KKT_TOL, max_iter=None):
    """Minimize the dependency objective (plus lam * sum(m)) over the feasible cone."""
    H = np.asarray(q.H, dtype=float)
    b = np.asarray(q.b, dtype=float)
    p = triu.n_params(d)
    if H.shape != (p, p) or b.shape != (p,):
        raise ParameterError(f"quadratic form does not match d={d}")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(b))):
        raise ParameterError("quadratic form contains non-finite entries")
    if lam < 0:
        raise ParameterError("sparsity weight must be non-negative")
    if max_iter is None:
        max_iter = 50 * p + 100

    tr = float(np.trace(H))
    ridge = 0.0
    if tr > 0 and np.linalg.eigvalsh(H)[0] < RIDGE_TRIGGER * tr:
        ridge = RIDGE_SIZE * tr
    elif tr <= 0:
        ridge = RIDGE_SIZE
    Hr = H + ridge * np.eye(p)

    B = cone_basis(d)
    Q = B.T @ Hr @ B
    Q = 0.5 * (Q + Q.T)
    c = B.T @ (b + lam)
    gtol = 1e-13 * max(1.0, float(np.max(np.abs(c))), float(np.max(np.abs(Q))))
    z, it, status, trace = _active_set(Q, c, max_iter, gtol)
    m = B @ z
    # pair entries are exact copies of z; only the diagonals carry rounding
    res = kkt_residual(q, d, lam, m)
    if status == "optimal" and res > tol:
        status = "numerical"
    return QPSolution(m=m, kkt_residual=res, iterations=it, status=status,
                      objective_trace=trace, ridge=ridge)
