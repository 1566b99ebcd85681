"""Dense linear-algebra kernels shared by the estimators.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The SVD carries a
deterministic sign convention so that every downstream quantity (projections,
tokens, cleaned blocks) is reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-10
INDEFINITE_TOL = 1e-10
INV_SQRT_FLOOR = 1e-10
CHOLESKY_FLOOR = 1e-12


class LinalgError(ValueError):
    """Invalid input to a linear-algebra kernel."""


class SvdConvergenceError(RuntimeError):
    def __init__(self, iterations: int):
        super().__init__(f"Jacobi SVD did not converge after {iterations} sweeps")
        self.iterations = iterations


class IndefiniteMatrixError(LinalgError):
    def __init__(self, min_eigenvalue: float):
        super().__init__(f"matrix is indefinite: minimum eigenvalue {min_eigenvalue:.3e}")
        self.min_eigenvalue = min_eigenvalue


class NotPositiveDefiniteError(LinalgError):
    def __init__(self, pivot: int, value: float):
        super().__init__(f"Cholesky failed at pivot {pivot} (value {value:.3e})")
        self.pivot = pivot
        self.value = value


@dataclass(frozen=True)
class SpectralDecomposition:
    """Thin SVD ``a = u @ diag(s) @ v.T`` with ``r = min(rows, cols)`` factors."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def reconstruct(self, s=None) -> np.ndarray:
        s = self.s if s is None else np.asarray(s, dtype=float)
        return (self.u * s) @ self.v.T

    def transpose(self) -> "SpectralDecomposition":
        return SpectralDecomposition(u=self.v, s=self.s, v=self.u)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise LinalgError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    return a


def _check_finite(a: np.ndarray, name: str = "matrix") -> None:
    if not np.all(np.isfinite(a)):
        raise LinalgError(f"{name} has non-finite entries")


def _check_symmetric(a: np.ndarray, name: str = "matrix") -> None:
    if a.shape[0] != a.shape[1]:
        raise LinalgError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise LinalgError(f"{name} is not symmetric")


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of each left vector made non-negative; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs, v * signs


def complete_orthonormal(basis: np.ndarray, n: int) -> np.ndarray:
    """Extend orthonormal columns to an orthonormal basis of R^n.

    Canonical basis vectors are projected against the current basis in index order
    and kept when their residual is not negligible (two Gram-Schmidt passes).
    """
    basis = np.asarray(basis, dtype=float).reshape(n, -1)
    cols = [basis[:, j] for j in range(basis.shape[1])]
    q = basis.copy()
    for j in range(n):
        if len(cols) == n:
            break
        w = np.zeros(n)
        w[j] = 1.0
        for _ in range(2):
            w = w - q @ (q.T @ w)
        norm = np.linalg.norm(w)
        if norm > 1e-8:
            cols.append(w / norm)
            q = np.column_stack(cols)
    if len(cols) != n:
        raise LinalgError("basis completion failed")
    return np.column_stack(cols)


def _jacobi_square(g: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Jacobi on the columns of ``g`` using round-robin parallel ordering.

    Returns the column-orthogonalised matrix and the accumulated right rotations.
    """
    n = g.shape[1]
    if n % 2:
        g = np.hstack([g, np.zeros((g.shape[0], 1))])
    m = g.shape[1]
    # work on rows for contiguous slicing
    gt = np.ascontiguousarray(g.T)
    vt = np.eye(m)
    order = np.arange(m)
    half = m // 2
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for _ in range(m - 1):
            p = order[:half]
            q = order[half:][::-1]
            gp, gq = gt[p], gt[q]
            alpha = np.einsum("ij,ij->i", gp, gp)
            beta = np.einsum("ij,ij->i", gq, gq)
            gamma = np.einsum("ij,ij->i", gp, gq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if active.any():
                rotated = True
                p, q = p[active], q[active]
                gp, gq = gp[active], gq[active]
                a, b, c = alpha[active], beta[active], gamma[active]
                zeta = (b - a) / (2.0 * c)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                gt[p] = cs[:, None] * gp - sn[:, None] * gq
                gt[q] = sn[:, None] * gp + cs[:, None] * gq
                vp, vq = vt[p], vt[q]
                vt[p] = cs[:, None] * vp - sn[:, None] * vq
                vt[q] = sn[:, None] * vp + cs[:, None] * vq
            order = np.concatenate([order[:1], order[-1:], order[1:-1]])
        if not rotated:
            return gt[:n].T, vt[:n, :n].T
    raise SvdConvergenceError(max_sweeps)


def _svd_jacobi(a: np.ndarray, tol: float, max_sweeps: int):
    m, n = a.shape
    if m < n:
        v, s, u = _svd_jacobi(a.T, tol, max_sweeps)
        return u, s, v
    q, r = np.linalg.qr(a)
    g, v = _jacobi_square(r, tol, max_sweeps)
    s = np.linalg.norm(g, axis=0)
    order = np.argsort(-s, kind="stable")
    s, g, v = s[order], g[:, order], v[:, order]
    u = np.zeros_like(g)
    tiny = s <= s[0] * 1e-15 if s[0] > 0 else np.ones_like(s, dtype=bool)
    u[:, ~tiny] = g[:, ~tiny] / s[~tiny]
    if tiny.any():
        u = complete_orthonormal(u[:, ~tiny], n)
        s[tiny] = 0.0
    return q @ u, s, v


def svd_thin(a, method: str = "lapack", tol: float = 1e-12, max_sweeps: int = 100) -> SpectralDecomposition:
    """Thin SVD with ``r = min(rows, cols)`` factors, sorted non-increasing.

    ``method="jacobi"`` runs the in-house one-sided Jacobi solver (QR-preconditioned,
    round-robin ordering, cap of ``max_sweeps`` sweeps). ``method="lapack"`` defers to
    ``numpy.linalg.svd``; both apply the same sign convention, where each left vector's
    largest-magnitude entry is non-negative.
    """
    a = as_matrix(a)
    _check_finite(a)
    if method == "jacobi":
        u, s, v = _svd_jacobi(a, tol, max_sweeps)
    elif method == "lapack":
        try:
            u, s, vt = np.linalg.svd(a, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise SvdConvergenceError(-1) from exc
        v = vt.T
    else:
        raise ValueError(f"unknown SVD method {method!r}")
    u, v = _fix_signs(u, v)
    return SpectralDecomposition(u=u, s=np.maximum(s, 0.0), v=v)


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix, eigenvalues non-increasing."""
    a = as_matrix(a)
    _check_finite(a)
    _check_symmetric(a)
    w, q = np.linalg.eigh(0.5 * (a + a.T))
    return w[::-1].copy(), q[:, ::-1].copy()


def _floored_eig(a, floor: float):
    w, q = sym_eig(a)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[-1] < -INDEFINITE_TOL * scale:
        raise IndefiniteMatrixError(float(w[-1]))
    return np.maximum(w, floor), q


def sym_sqrt(a, floor: float = 0.0) -> np.ndarray:
    w, q = _floored_eig(a, floor)
    return (q * np.sqrt(w)) @ q.T


def sym_inv_sqrt(a, floor: float = INV_SQRT_FLOOR) -> np.ndarray:
    if floor <= 0:
        raise LinalgError("inverse square root requires a strictly positive floor")
    w, q = _floored_eig(a, floor)
    return (q / np.sqrt(w)) @ q.T


def floor_eigenvalues(a, floor: float = CHOLESKY_FLOOR) -> np.ndarray:
    """Symmetric matrix with eigenvalues raised to at least ``floor``."""
    w, q = _floored_eig(a, floor)
    out = (q * w) @ q.T
    return 0.5 * (out + out.T)


def cholesky(a) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L @ L.T == a``."""
    a = as_matrix(a)
    _check_finite(a)
    _check_symmetric(a)
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        row = low[j, :j]
        d = a[j, j] - row @ row
        if not d > 0.0:
            raise NotPositiveDefiniteError(j, float(d))
        ljj = np.sqrt(d)
        low[j, j] = ljj
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ row) / ljj
    return low


def pava_isotonic(x, y, weights=None) -> np.ndarray:
    """Least-squares non-decreasing fit of ``y`` ordered by ascending ``x``.

    Pool-adjacent-violators: adjacent blocks are merged into their weighted mean
    until the block means are non-decreasing.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LinalgError("x and y must be 1-D arrays of equal length")
    if x.size > 1 and np.any(np.diff(x) < 0):
        raise LinalgError("x must be sorted ascending")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    means: list[float] = []
    wsum: list[float] = []
    counts: list[int] = []
    for yi, wi in zip(y, w):
        means.append(yi)
        wsum.append(wi)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), wsum.pop(), counts.pop()
            m1, w1 = means[-1], wsum[-1]
            means[-1] = (m1 * w1 + m2 * w2) / (w1 + w2)
            wsum[-1] = w1 + w2
            counts[-1] += c2
    return np.repeat(means, counts)


def frobenius_mse(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LinalgError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d) / d.size)


def equicorrelation(n: int, m: float) -> np.ndarray:
    """``(1 - m) I + m 11^T``."""
    return (1.0 - m) * np.eye(n) + m * np.ones((n, n))


def equicorrelation_sqrt_coeffs(n: int, m: float) -> tuple[float, float]:
    """Coefficients ``(a, b)`` with ``(a I + b 11^T)^2 = (1 - m) I + m 11^T``."""
    a = np.sqrt(1.0 - m)
    b = (np.sqrt(1.0 - m + m * n) - a) / n
    return float(a), float(b)
