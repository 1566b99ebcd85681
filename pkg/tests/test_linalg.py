import numpy as np
import pytest

from xcov.linalg import (
    IndefiniteMatrixError,
    LinalgError,
    NotPositiveDefiniteError,
    SvdConvergenceError,
    cholesky,
    complete_orthonormal,
    equicorrelation,
    equicorrelation_sqrt_coeffs,
    floor_eigenvalues,
    frobenius_mse,
    pava_isotonic,
    svd_thin,
    sym_eig,
    sym_inv_sqrt,
    sym_sqrt,
)


class TestCholesky:
    def test_known_factor(self):
        l = cholesky([[4.0, 2.0], [2.0, 5.0]])
        np.testing.assert_allclose(l, [[2.0, 0.0], [1.0, 2.0]], atol=1e-15)

    def test_matches_numpy(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((12, 12))
        m = a @ a.T + 12 * np.eye(12)
        np.testing.assert_allclose(cholesky(m), np.linalg.cholesky(m), atol=1e-12)

    def test_indefinite_reports_pivot(self):
        with pytest.raises(NotPositiveDefiniteError) as err:
            cholesky([[1.0, 2.0], [2.0, 1.0]])
        assert err.value.pivot == 1

    def test_asymmetric_rejected(self):
        with pytest.raises(LinalgError):
            cholesky([[1.0, 0.5], [0.0, 1.0]])


class TestEig:
    def test_two_by_two(self):
        w, v = sym_eig([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(w, [3.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(np.abs(v[:, 0]), [2**-0.5, 2**-0.5], atol=1e-14)

    def test_descending_and_orthonormal(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((9, 9))
        w, v = sym_eig(a + a.T)
        assert np.all(np.diff(w) <= 0)
        np.testing.assert_allclose(v.T @ v, np.eye(9), atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(LinalgError):
            sym_eig([[1.0, np.nan], [np.nan, 1.0]])


class TestSvd:
    def test_rank_one(self):
        a = np.outer([1.0, 2.0, 2.0], [3.0, 4.0])
        d = svd_thin(a)
        np.testing.assert_allclose(d.s, [15.0, 0.0], atol=1e-12)
        assert d.rank == 2 and np.sum(d.s > 1e-12) == 1

    @pytest.mark.parametrize("method", ["lapack", "jacobi"])
    @pytest.mark.parametrize("shape", [(5, 5), (7, 3), (3, 8), (1, 4)])
    def test_reconstructs(self, method, shape):
        a = np.random.default_rng(sum(shape)).standard_normal(shape)
        d = svd_thin(a, method=method)
        assert d.u.shape == (shape[0], min(shape)) and d.v.shape == (shape[1], min(shape))
        np.testing.assert_allclose(d.reconstruct(), a, atol=1e-12)
        np.testing.assert_allclose(d.s, np.linalg.svd(a, compute_uv=False), atol=1e-12)
        assert np.all(np.diff(d.s) <= 0)

    def test_sign_convention(self):
        a = np.random.default_rng(3).standard_normal((6, 4))
        for method in ("lapack", "jacobi"):
            d = svd_thin(a, method=method)
            for k in range(4):
                col = d.u[:, k]
                assert col[np.argmax(np.abs(col))] >= 0

    def test_jacobi_matches_lapack_vectors(self):
        a = np.random.default_rng(4).standard_normal((8, 5))
        d1, d2 = svd_thin(a), svd_thin(a, method="jacobi")
        np.testing.assert_allclose(d1.u, d2.u, atol=1e-9)
        np.testing.assert_allclose(d1.v, d2.v, atol=1e-9)

    def test_sweep_cap(self):
        a = np.random.default_rng(5).standard_normal((10, 10))
        with pytest.raises(SvdConvergenceError):
            svd_thin(a, method="jacobi", max_sweeps=1)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            svd_thin(np.eye(2), method="qr")

    def test_transpose(self):
        a = np.random.default_rng(6).standard_normal((3, 5))
        np.testing.assert_allclose(svd_thin(a).transpose().reconstruct(), a.T, atol=1e-12)


class TestRoots:
    def test_sqrt_squares_back(self):
        a = np.random.default_rng(7).standard_normal((6, 6))
        m = a @ a.T + np.eye(6)
        r = sym_sqrt(m)
        np.testing.assert_allclose(r @ r, m, atol=1e-11)
        np.testing.assert_allclose(sym_inv_sqrt(m) @ m @ sym_inv_sqrt(m), np.eye(6), atol=1e-10)

    def test_indefinite_raises(self):
        with pytest.raises(IndefiniteMatrixError):
            sym_sqrt([[1.0, 2.0], [2.0, 1.0]])

    def test_floor_eigenvalues(self):
        out = floor_eigenvalues(np.diag([2.0, 0.0]), 0.1)
        np.testing.assert_allclose(out, np.diag([2.0, 0.1]), atol=1e-15)


class TestPava:
    def test_single_violation(self):
        np.testing.assert_allclose(pava_isotonic([0, 1, 2], [3.0, 1.0, 2.0]), [2.0, 2.0, 2.0])

    def test_local_pool(self):
        np.testing.assert_allclose(pava_isotonic([0, 1, 2, 3], [1.0, 3.0, 2.0, 4.0]), [1.0, 2.5, 2.5, 4.0])

    def test_sorted_input_unchanged(self):
        y = [0.1, 0.2, 0.2, 0.9]
        np.testing.assert_array_equal(pava_isotonic(np.arange(4), y), y)

    def test_weights(self):
        np.testing.assert_allclose(pava_isotonic([0, 1], [2.0, 0.0], weights=[3.0, 1.0]), [1.5, 1.5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pava_isotonic([0, 1, 2], [1.0, 2.0])

    def test_unsorted_x(self):
        with pytest.raises(ValueError):
            pava_isotonic([1, 0], [1.0, 2.0])


class TestEquicorrelation:
    @pytest.mark.parametrize("n", [2, 7, 50])
    @pytest.mark.parametrize("m", [0.05, 0.3, 0.5])
    def test_closed_form_sqrt(self, n, m):
        a, b = equicorrelation_sqrt_coeffs(n, m)
        root = a * np.eye(n) + b * np.ones((n, n))
        np.testing.assert_allclose(root @ root, equicorrelation(n, m), atol=1e-12)
        assert np.isclose(sym_eig(equicorrelation(n, m))[0][0], 1 + m * (n - 1), atol=1e-12)


def test_complete_orthonormal():
    q, _ = np.linalg.qr(np.random.default_rng(8).standard_normal((6, 2)))
    full = complete_orthonormal(q, 6)
    assert full.shape == (6, 6)
    np.testing.assert_allclose(full[:, :2], q)
    np.testing.assert_allclose(full.T @ full, np.eye(6), atol=1e-12)


def test_frobenius_mse():
    assert frobenius_mse(np.zeros((2, 3)), np.ones((2, 3))) == 1.0
    with pytest.raises(ValueError):
        frobenius_mse(np.zeros((2, 3)), np.zeros((3, 2)))
