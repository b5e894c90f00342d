import itertools

import numpy as np
import pytest

from depca import qpsolve as qp
from depca import scorematch as sm
from depca import triu
from depca.errors import FeasibilityError, ParameterError
from oracles import cone_map as _cone_map
from oracles import projected_gradient as _oracle


def _random_instance(d, rng):
    p = triu.n_params(d)
    G = rng.standard_normal((p + 3, p))
    H = G.T @ G / p + 0.05 * np.eye(p)
    b = rng.standard_normal(p)
    return sm.QuadraticForm(H, b)


def _data_instance(d, rng, T=400):
    X = rng.laplace(size=(T, d))
    W = np.linalg.qr(rng.standard_normal((d, d)))[0]
    return sm.assemble_quadratic(X, W)


def _check_feasible(m, d):
    M = triu.to_matrix(m)
    assert np.all(m >= -1e-10)
    off = M.sum(axis=1) - np.diag(M)
    assert np.all(off - np.diag(M) <= 1e-10 * max(1.0, np.max(np.abs(m))))


class TestBasics:
    def test_cone_basis_matches_independent_build(self):
        for d in range(1, 7):
            np.testing.assert_array_equal(qp.cone_basis(d), _cone_map(d))

    def test_unconstrained_minimum_inside(self):
        # H = I, b = -m* with m* strictly feasible: the solution is m*
        d = 3
        M = np.array([[3.0, 0.5, 0.4], [0.5, 2.0, 0.3], [0.4, 0.3, 1.5]])
        m_star = triu.to_vector(M)
        sol = qp.solve_dependency_qp(sm.QuadraticForm(np.eye(6), -m_star), d)
        np.testing.assert_allclose(sol.m, m_star, atol=1e-12)
        assert sol.status == "optimal"

    def test_positive_linear_term_gives_zero(self):
        sol = qp.solve_dependency_qp(sm.QuadraticForm(np.eye(3), np.ones(3)), 2)
        assert np.all(sol.m == 0)

    def test_bad_input(self):
        q = sm.QuadraticForm(np.eye(3), np.array([np.nan, 0.0, 0.0]))
        with pytest.raises(ParameterError):
            qp.solve_dependency_qp(q, 2)
        with pytest.raises(ParameterError):
            qp.solve_dependency_qp(sm.QuadraticForm(np.eye(3), np.zeros(3)), 3)
        with pytest.raises(ParameterError):
            qp.solve_dependency_qp(sm.QuadraticForm(np.eye(3), np.zeros(3)), 2, lam=-1.0)

    def test_singular_h_gets_ridge(self):
        H = np.zeros((3, 3))
        H[0, 0] = 1.0
        sol = qp.solve_dependency_qp(sm.QuadraticForm(H, np.array([-1.0, 0.0, 0.0])), 2)
        assert sol.ridge > 0
        assert np.all(np.isfinite(sol.m))

    def test_kkt_rejects_infeasible(self):
        q = sm.QuadraticForm(np.eye(3), np.zeros(3))
        with pytest.raises(FeasibilityError):
            qp.kkt_residual(q, 2, 0.0, np.array([1.0, 2.0, 1.0]))
        with pytest.raises(FeasibilityError):
            qp.kkt_residual(q, 2, 0.0, np.array([1.0, -0.1, 1.0]))


class TestOracle:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_projected_gradient(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 7))
        q = _random_instance(d, rng) if seed % 2 else _data_instance(d, rng)
        sol = qp.solve_dependency_qp(q, d)
        m_or, f_or = _oracle(q.H, q.b, d)
        f = 0.5 * sol.m @ q.H @ sol.m + sol.m @ q.b
        assert sol.status == "optimal"
        assert sol.kkt_residual <= 1e-6
        assert abs(f - f_or) <= 1e-8 * max(1.0, abs(f_or))
        assert f <= f_or + 1e-12 * max(1.0, abs(f_or))
        _check_feasible(sol.m, d)

    def test_brute_force_active_sets(self):
        # enumerate every face of the cone for a tiny instance
        rng = np.random.default_rng(11)
        d = 2
        q = _random_instance(d, rng)
        B = _cone_map(d)
        Q, c = B.T @ q.H @ B, B.T @ q.b
        best = 0.0
        for free in itertools.product([0, 1], repeat=3):
            F = np.flatnonzero(free)
            if F.size == 0:
                continue
            z = np.zeros(3)
            z[F] = np.linalg.solve(Q[np.ix_(F, F)], -c[F])
            if np.all(z >= 0):
                best = min(best, 0.5 * z @ Q @ z + c @ z)
        sol = qp.solve_dependency_qp(q, d)
        assert 0.5 * sol.m @ q.H @ sol.m + sol.m @ q.b == pytest.approx(best, abs=1e-12)


class TestSparsity:
    def test_lambda_grid_monotone(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            d = 5
            q = _data_instance(d, rng)
            totals = []
            for lam in np.linspace(0.0, 0.2, 5):
                sol = qp.solve_dependency_qp(q, d, lam)
                assert sol.kkt_residual <= 1e-6
                _check_feasible(sol.m, d)
                totals.append(sol.m.sum())
            assert np.all(np.diff(totals) <= 1e-10)

    def test_oracle_with_lambda(self):
        rng = np.random.default_rng(21)
        d = 4
        q = _data_instance(d, rng)
        sol = qp.solve_dependency_qp(q, d, 0.05)
        _, f_or = _oracle(q.H, q.b, d, 0.05)
        f = 0.5 * sol.m @ q.H @ sol.m + sol.m @ (q.b + 0.05)
        assert abs(f - f_or) <= 1e-8 * max(1.0, abs(f_or))


class TestKKT:
    def test_perturbation_increases_residual(self):
        rng = np.random.default_rng(3)
        d = 4
        q = _data_instance(d, rng)
        sol = qp.solve_dependency_qp(q, d)
        # a feasible point slightly off the optimum along the cone
        B = _cone_map(d)
        z = np.linalg.solve(B, sol.m)
        z_bad = z + 0.1 * (1.0 + z)
        r = qp.kkt_residual(q, d, 0.0, B @ z_bad)
        assert r > 1e3 * max(sol.kkt_residual, 1e-12)

    def test_zero_is_optimal_for_positive_gradient(self):
        q = sm.QuadraticForm(np.eye(3), np.array([1.0, 0.5, 1.0]))
        assert qp.kkt_residual(q, 2, 0.0, np.zeros(3)) == 0.0

    def test_objective_trace_non_increasing(self):
        rng = np.random.default_rng(4)
        q = _random_instance(6, rng)
        sol = qp.solve_dependency_qp(q, 6)
        tr = np.array(sol.objective_trace)
        assert np.all(np.diff(tr) <= 1e-12 * max(1.0, np.max(np.abs(tr))))
