import itertools
import logging

import numpy as np
import pytest

from depca import evaluation as ev
from depca import genmodel as gm
from depca import preprocess as pp
from depca.density import log_ptilde_s
from depca.errors import DimensionError, GridError, ParameterError

REF_OFF = (1 / np.sqrt(3)) / (1 + 2 / np.sqrt(3))


def _perm_matrix(perm):
    d = len(perm)
    P = np.zeros((d, d))
    P[np.arange(d), perm] = 1.0
    return P


class TestPerformanceMatrix:
    def test_inverse(self):
        A = np.random.default_rng(0).standard_normal((4, 4))
        np.testing.assert_allclose(ev.performance_matrix(np.linalg.inv(A), A), np.eye(4), atol=1e-12)

    def test_permuted_inverse(self):
        A = np.random.default_rng(1).standard_normal((4, 4))
        Pi = _perm_matrix([3, 1, 0, 2])
        np.testing.assert_allclose(ev.performance_matrix(Pi @ np.linalg.inv(A), A), Pi, atol=1e-12)

    def test_with_whitening(self):
        ds = gm.generate_dataset(gm.GenerationSpec.independent(d=3, T=1000, seed=2))
        t = pp.fit_whitening(ds.X)
        W = np.linalg.inv(t.projection @ ds.A)
        np.testing.assert_allclose(ev.performance_matrix(W, ds.A, t), np.eye(3), atol=1e-10)
        np.testing.assert_allclose(ev.performance_matrix(W, ds.A, t.projection), np.eye(3), atol=1e-10)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            ev.performance_matrix(np.eye(3), np.eye(2))


class TestMatching:
    def test_permutation(self):
        perm = np.array([2, 0, 3, 1])
        m = ev.match_permutation(_perm_matrix(perm))
        np.testing.assert_array_equal(m.perm, perm)
        np.testing.assert_array_equal(m.signs, 1.0)

    def test_negative_identity(self):
        m = ev.match_permutation(-np.eye(3))
        np.testing.assert_array_equal(m.perm, [0, 1, 2])
        np.testing.assert_array_equal(m.signs, -1.0)

    def test_tie_gives_bijection(self):
        P = np.array([[0.9, 0.1, 0.0], [0.8, 0.7, 0.0], [0.0, 0.0, 1.0]])
        m = ev.match_permutation(P)
        assert sorted(m.perm.tolist()) == [0, 1, 2]
        np.testing.assert_array_equal(m.perm, [0, 1, 2])

    @pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
    def test_brute_force(self, d):
        rng = np.random.default_rng(d)
        for _ in range(10):
            P = rng.standard_normal((d, d))
            # plant repeated maxima in one column
            P[:, 0] = np.sign(P[:, 0]) * 3.0
            m = ev.match_permutation(P)
            got = np.sum(np.abs(P[np.arange(d), m.perm]))
            best = max(np.sum(np.abs(P[np.arange(d), list(s)]))
                       for s in itertools.permutations(range(d)))
            assert got == pytest.approx(best, abs=1e-12)

    def test_aligned_diagonal_non_negative(self):
        P = np.random.default_rng(9).standard_normal((5, 5))
        m = ev.match_permutation(P)
        Pa = m.align_rows(P)
        assert np.all(np.diag(Pa) >= 0)

    def test_align_dependency(self):
        perm = np.array([1, 2, 0])
        m = ev.Matching(perm, np.ones(3))
        M = np.arange(9.0).reshape(3, 3)
        out = m.align_dependency(M)
        for i in range(3):
            for j in range(3):
                assert out[perm[i], perm[j]] == M[i, j]


class TestAmari:
    def test_signed_permutation_zero(self):
        P = _perm_matrix([1, 2, 0]) * np.array([[-2.0], [0.5], [3.0]])
        assert ev.amari_index(P) == 0.0

    def test_non_permutation_positive(self):
        P = np.eye(3)
        P[0, 1] = 0.1
        assert ev.amari_index(P) > 0

    def test_all_ones(self):
        assert ev.amari_index(np.ones((2, 2))) == 1.0

    def test_sign_invariance(self):
        rng = np.random.default_rng(3)
        P = rng.standard_normal((5, 5))
        D1, D2 = np.diag(rng.choice([-1.0, 1.0], 5)), np.diag(rng.choice([-1.0, 1.0], 5))
        assert ev.amari_index(D1 @ P @ D2) == ev.amari_index(P)

    def test_range(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            a = ev.amari_index(rng.standard_normal((4, 4)))
            assert 0.0 <= a <= 1.0

    def test_zero_row(self):
        with pytest.raises(ParameterError):
            ev.amari_index(np.array([[1.0, 0.0], [0.0, 0.0]]))


class TestNormalization:
    def test_diagonal(self):
        np.testing.assert_array_equal(ev.normalize_dependency(np.diag([2.0, 5.0, 0.3])), np.eye(3))

    def test_two_by_two(self):
        np.testing.assert_allclose(ev.normalize_dependency([[4.0, 2.0], [2.0, 1.0]]), np.ones((2, 2)))

    def test_scale_invariant(self):
        M = np.array([[3.0, 1.0, 0.2], [1.0, 2.0, 0.5], [0.2, 0.5, 1.0]])
        np.testing.assert_allclose(ev.normalize_dependency(7.5 * M), ev.normalize_dependency(M),
                                   rtol=1e-15)

    def test_zero_diagonal(self, caplog):
        M = np.array([[1.0, 0.0], [0.0, 0.0]])
        with caplog.at_level(logging.WARNING):
            out = ev.normalize_dependency(M)
        np.testing.assert_array_equal(out, np.eye(2))
        assert "diagonal" in caplog.text


class TestReference:
    def test_independent(self):
        np.testing.assert_array_equal(ev.reference_matrix(gm.GenerationSpec.independent()), np.eye(10))

    def test_block_value(self):
        ref = ev.reference_matrix(gm.GenerationSpec.block())
        assert ref[0, 1] == pytest.approx(0.2679, abs=1e-4)
        assert ref[0, 1] == pytest.approx(REF_OFF, rel=1e-14)
        assert np.count_nonzero(ref - np.eye(10)) == 6

    def test_row_dominance(self):
        ref = ev.reference_matrix(gm.GenerationSpec.block())
        off = ref.sum(axis=1) - np.diag(ref)
        assert np.all(off <= np.diag(ref))


class TestErrorM:
    def test_proportional(self):
        ref = ev.reference_matrix(gm.GenerationSpec.block(d=5))
        assert ev.error_M(3.0 * ref, ref) == pytest.approx(0.0, abs=1e-15)

    def test_identity_against_block(self):
        ref = ev.reference_matrix(gm.GenerationSpec.block())
        val = ev.error_M(np.eye(10), ref)
        assert val == pytest.approx(np.sqrt(6 * REF_OFF**2), rel=1e-12)
        assert val == pytest.approx(0.656, abs=1e-3)

    def test_alignment(self):
        ref = ev.reference_matrix(gm.GenerationSpec.block(d=5))
        perm = np.array([4, 2, 0, 1, 3])
        # estimate i corresponds to true source perm[i]
        M_hat = 2.0 * ref[np.ix_(perm, perm)]
        P = np.zeros((5, 5))
        P[np.arange(5), perm] = 1.0
        m = ev.match_permutation(P)
        assert ev.error_M(M_hat, ref, m) == pytest.approx(0.0, abs=1e-14)
        assert ev.error_M(M_hat, ref) > 0.1

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            ev.error_M(np.eye(2), np.eye(3))


class TestCorrelations:
    def test_independent_laplace(self):
        S = np.random.default_rng(0).laplace(size=(10**5, 4))
        lin, en = ev.correlation_matrices(S)
        assert np.max(np.abs(lin - np.eye(4))) < 0.05
        assert np.max(np.abs(en - np.eye(4))) < 0.05

    def test_block(self):
        ds = gm.generate_dataset(gm.GenerationSpec.block(d=5, T=20000, seed=1))
        lin, en = ev.correlation_matrices(ds.S)
        for i, j in [(0, 1), (0, 2), (1, 2)]:
            assert lin[i, j] > 0 and en[i, j] > 0

    def test_energy_sign_invariant(self):
        S = np.random.default_rng(2).standard_normal((100, 3))
        assert np.array_equal(ev.correlation_matrices(-S)[1], ev.correlation_matrices(S)[1])

    def test_zero_variance(self):
        S = np.ones((10, 2))
        S[:, 1] = np.arange(10)
        with pytest.raises(ParameterError):
            ev.correlation_matrices(S)


@pytest.fixture(scope="module")
def samples():
    M = np.array([[1.0, 0.95], [0.95, 1.0]])
    spec = gm.GenerationSpec.from_dependency(M, 10**6)
    return gm.sample_hierarchical(spec, np.random.default_rng(0)), M


class TestDensityComparison:

    def test_model_beats_baselines(self, samples):
        S, M = samples
        r = ev.density_comparison(S, M, 100)
        for base in r.baselines.values():
            assert r.ang > base.ang
            assert r.kl < base.kl
            assert r.sq < base.sq

    def test_measure_ranges(self, samples):
        S, M = samples
        r = ev.density_comparison(S, M, 50)
        for meas in [r.approx, *r.baselines.values()]:
            assert meas.ang <= 1.0
            assert meas.kl >= -1e-9
            assert meas.sq >= 0.0
        assert r.histogram.mass.sum() == pytest.approx(1.0, abs=1e-12)

    def test_grid_refinement_stabilizes(self, samples):
        S, M = samples
        angs = [ev.density_comparison(S, M, n).ang for n in (50, 100, 200)]
        assert abs(angs[2] - angs[1]) < abs(angs[1] - angs[0])

    def test_self_comparison(self):
        # bin counts drawn from the model's own grid masses
        rng = np.random.default_rng(5)
        M = np.array([[1.0, 0.5], [0.5, 1.0]])
        c = np.linspace(-4, 4, 60)
        gx, gy = np.meshgrid(c, c, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        q = ev.grid_masses(log_ptilde_s(pts, M), (60, 60))
        p = rng.multinomial(10**7, q.ravel()).reshape(q.shape) / 1e7
        meas = ev.comparison_measures(p, q)
        assert meas.ang == pytest.approx(1.0, abs=1e-4)
        assert abs(meas.kl) < 1e-3
        exact = ev.comparison_measures(q, q)
        assert exact.ang == pytest.approx(1.0, abs=1e-15) and exact.kl == 0.0 and exact.sq == 0.0

    def test_too_fine_grid(self):
        S = np.random.default_rng(6).laplace(size=(500, 2))
        with pytest.raises(GridError):
            ev.density_comparison(S, np.eye(2), 200)

    def test_wrong_dimension(self):
        with pytest.raises(DimensionError):
            ev.density_comparison(np.zeros((10, 3)), np.eye(3))


class TestMDS:
    def test_identity(self):
        emb = ev.mds_embedding(np.eye(4))
        D = emb.distance
        np.testing.assert_array_equal(D, 1.0 - np.eye(4))
        # all points equidistant from the centroid
        r = np.linalg.norm(emb.coords - emb.coords.mean(0), axis=1)
        assert np.ptp(r) < 1e-12 or np.allclose(emb.eigenvalues[0], emb.eigenvalues[1])

    def test_coincident_points(self):
        M = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        emb = ev.mds_embedding(M)
        assert emb.distance[0, 1] == 0.0
        # the second eigenvalue is zero up to rounding, so its axis carries ~sqrt(eps) noise
        np.testing.assert_allclose(emb.coords[0], emb.coords[1], atol=1e-7)

    def test_block_structure(self):
        d = 6
        M = np.eye(d)
        for i, j in [(0, 1), (0, 2), (1, 2), (3, 4)]:
            M[i, j] = M[j, i] = 0.3
        emb = ev.mds_embedding(M)
        C = emb.coords
        dist = np.linalg.norm(C[:, None] - C[None], axis=2)
        within = np.mean([dist[0, 1], dist[0, 2], dist[1, 2]])
        across = np.mean([dist[i, j] for i in range(3) for j in range(3, d)])
        assert within < across

    def test_exact_for_euclidean_distances(self):
        # distances from planar points are reproduced exactly
        rng = np.random.default_rng(7)
        X = rng.standard_normal((5, 2)) * 0.2
        D = np.linalg.norm(X[:, None] - X[None], axis=2)
        Mn = (1.0 - D) ** 2
        emb = ev.mds_embedding(Mn)
        C = emb.coords
        np.testing.assert_allclose(np.linalg.norm(C[:, None] - C[None], axis=2), D, atol=1e-10)
