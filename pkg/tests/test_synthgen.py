import numpy as np
import pytest

from xcov.linalg import equicorrelation, sym_eig, sym_sqrt
from xcov.synthgen import (
    GAUSSIAN,
    BenchmarkError,
    RngStream,
    apply_equicorrelation_sqrt,
    build_benchmark,
    build_finite_rank,
    build_heavy_bulk,
    build_mode,
    build_white_heavy,
    haar_orthogonal,
    parse_param,
    sample_observations,
)


def _min_eig(m):
    return sym_eig(m)[0][-1]


class TestRngStream:
    def test_reproducible(self):
        a = RngStream(7, 3).generator(1).standard_normal(5)
        b = RngStream(7, 3).generator(1).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = RngStream(7, 3).generator().standard_normal(5)
        b = RngStream(7, 4).generator().standard_normal(5)
        c = RngStream(8, 3).generator().standard_normal(5)
        assert not np.allclose(a, b) and not np.allclose(a, c)


class TestHaar:
    def test_orthogonal(self):
        q = haar_orthogonal(8, 0)
        np.testing.assert_allclose(q.T @ q, np.eye(8), atol=1e-13)

    def test_first_entry_symmetric(self):
        # Haar measure is invariant under sign flips: the mean of q[0, 0] vanishes
        g = np.random.default_rng(1)
        vals = [haar_orthogonal(3, g)[0, 0] for _ in range(4000)]
        assert abs(np.mean(vals)) < 0.03


class TestFiniteRank:
    def test_structure(self):
        pop = build_finite_rank(10, 15, 0.4, 0)
        s = np.linalg.svd(pop.sigma_xy, compute_uv=False)
        assert np.sum(s > 1e-12) == 4
        assert np.all((s[:4] >= 0.2) & (s[:4] <= 0.5))
        np.testing.assert_array_equal(pop.sigma_xx, np.eye(10))
        np.testing.assert_allclose(pop.sigma_yy, pop.sigma_xy.T @ pop.sigma_xy + 0.5 * np.eye(15), atol=1e-15)
        assert _min_eig(pop.block()) > 0

    def test_zero_spikes(self):
        pop = build_finite_rank(5, 6, 0.0, 0)
        np.testing.assert_array_equal(pop.sigma_xy, 0.0)
        np.testing.assert_array_equal(pop.target, 0.0)

    def test_bad_xi(self):
        with pytest.raises(BenchmarkError):
            build_finite_rank(5, 6, 1.5, 0)


class TestHeavy:
    @pytest.mark.parametrize("alpha", [GAUSSIAN, 2.5])
    def test_bulk_psd(self, alpha):
        pop = build_heavy_bulk(8, 12, alpha, 0)
        assert _min_eig(pop.block()) > 0

    def test_white_marginals(self):
        pop = build_white_heavy(8, 12, 3.0, 0)
        s_max = np.linalg.svd(pop.sigma_xy, compute_uv=False)[0]
        np.testing.assert_allclose(pop.sigma_xx, s_max * np.eye(8))
        np.testing.assert_allclose(pop.sigma_yy, s_max * np.eye(12))
        # whitened cross block has top canonical value exactly 1: PSD boundary
        assert np.isclose(np.linalg.svd(pop.target, compute_uv=False)[0], 1.0)

    def test_bad_alpha(self):
        with pytest.raises(BenchmarkError):
            build_heavy_bulk(3, 3, 0.5, 0)


class TestMode:
    def test_equicorrelation_fast_path(self):
        g = np.random.default_rng(2)
        a = g.standard_normal((9, 9))
        sigma = a @ a.T
        root = sym_sqrt(equicorrelation(9, 0.3))
        np.testing.assert_allclose(apply_equicorrelation_sqrt(sigma, 0.3), root @ sigma @ root, atol=1e-11)

    def test_unit_diagonal_and_mode(self):
        pop = build_mode(30, 40, 0.5, 0)
        block = pop.block()
        np.testing.assert_array_equal(np.diag(block), 1.0)
        assert sym_eig(block)[0][0] > 0.3 * 70
        assert _min_eig(block) > 0

    def test_m_zero_is_heavy_gaussian_correlation(self):
        a = build_mode(4, 5, 0.0, RngStream(1).generator())
        b = build_heavy_bulk(4, 5, GAUSSIAN, RngStream(1).generator())
        np.testing.assert_allclose(a.sigma_xy, b.target, atol=1e-14)


class TestParseParam:
    def test_values(self):
        assert parse_param("finite-rank", "0.2") == 0.2
        assert parse_param("heavy-bulk", "gaussian") == GAUSSIAN
        assert parse_param("white_heavy", "2.5") == 2.5
        assert parse_param("mode", 0.5) == 0.5

    @pytest.mark.parametrize(
        "bench,value", [("mode", "gaussian"), ("mode", "1.0"), ("finite_rank", "-0.1"), ("heavy_bulk", "1"), ("foo", "0.1")]
    )
    def test_rejects(self, bench, value):
        with pytest.raises(BenchmarkError):
            parse_param(bench, value)

    def test_unknown_benchmark(self):
        with pytest.raises(BenchmarkError):
            build_benchmark("spiky", 3, 3, 0.1, 0)


class TestSampling:
    def test_shapes_and_moments(self):
        pop = build_finite_rank(4, 6, 0.5, 0)
        x, y = sample_observations(pop, 40_000, 1)
        assert x.shape == (40_000, 4) and y.shape == (40_000, 6)
        emp = np.hstack([x, y]).T @ np.hstack([x, y]) / 40_000
        np.testing.assert_allclose(emp, pop.block(), atol=0.04)

    def test_boundary_model_samples(self):
        # white-heavy sits on the PSD boundary; the eigenvalue floor keeps Cholesky alive
        pop = build_white_heavy(5, 7, GAUSSIAN, 0)
        x, y = sample_observations(pop, 50, 1)
        assert np.all(np.isfinite(x)) and np.all(np.isfinite(y))
