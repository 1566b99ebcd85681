"""Rotationally invariant cleaners for empirical cross-correlation blocks.

Every estimator keeps the empirical singular vectors of ``C_xy`` and only replaces
the singular values; see :func:`reconstruct_rie`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    LinalgError,
    SpectralDecomposition,
    complete_orthonormal,
    pava_isotonic,
    svd_thin,
)

METHODS = ("mle", "bbp", "cv", "oracle", "neural")


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationTriplet:
    cxx: np.ndarray
    cyy: np.ndarray
    cxy: np.ndarray
    std_x: np.ndarray
    std_y: np.ndarray
    dt_in: int

    @property
    def n_x(self) -> int:
        return self.cxy.shape[0]

    @property
    def n_y(self) -> int:
        return self.cxy.shape[1]

    @property
    def q_x(self) -> float:
        return self.n_x / self.dt_in

    @property
    def q_y(self) -> float:
        return self.n_y / self.dt_in

    def transpose(self) -> "CorrelationTriplet":
        return CorrelationTriplet(self.cyy, self.cxx, self.cxy.T, self.std_y, self.std_x, self.dt_in)


@dataclass(frozen=True)
class ProjectedSpectrum:
    """Marginal projections on the (completed) singular bases, zero-padded to ``p``.

    ``gamma_extra`` is the marginal energy of the larger side outside the first ``r``
    singular directions; it is zero when the block is square.
    """

    s_pad: np.ndarray
    gamma_x_pad: np.ndarray
    gamma_y_pad: np.ndarray
    gamma_extra: float
    r: int
    n_x: int
    n_y: int

    @property
    def p(self) -> int:
        return self.s_pad.shape[0]


@dataclass(frozen=True)
class BBPFunctionals:
    eta: float
    zeta: np.ndarray
    h: np.ndarray
    a: np.ndarray
    b: np.ndarray
    theta: np.ndarray
    l: np.ndarray


@dataclass(frozen=True)
class ShrinkageResult:
    method: str
    s_clean: np.ndarray
    cleaned: np.ndarray
    decomposition: SpectralDecomposition | None = None


def standardize(panel: np.ndarray, names=None) -> tuple[np.ndarray, np.ndarray]:
    """De-mean columns and scale to unit standard deviation (divisor ``T``)."""
    panel = np.asarray(panel, dtype=float)
    if panel.ndim != 2 or panel.shape[0] < 2:
        raise EstimatorError("need a T x n panel with T >= 2")
    if not np.all(np.isfinite(panel)):
        raise EstimatorError("panel has missing or non-finite entries")
    centred = panel - panel.mean(axis=0)
    std = np.sqrt(np.mean(centred * centred, axis=0))
    scale = np.maximum(np.abs(panel).max(axis=0), 1e-300)
    bad = np.flatnonzero(std <= 1e-14 * scale)
    if bad.size:
        col = bad[0] if names is None else names[bad[0]]
        raise EstimatorError(f"column {col!r} has zero variance")
    return centred / std, std


def _unit_diag(c: np.ndarray) -> np.ndarray:
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c


def correlation_from_standardized(xs: np.ndarray, ys: np.ndarray, std_x, std_y) -> CorrelationTriplet:
    t = xs.shape[0]
    return CorrelationTriplet(
        cxx=_unit_diag(xs.T @ xs / t),
        cyy=_unit_diag(ys.T @ ys / t),
        cxy=xs.T @ ys / t,
        std_x=std_x,
        std_y=std_y,
        dt_in=t,
    )


def sample_cross_correlation(x_window, y_window, x_names=None, y_names=None) -> CorrelationTriplet:
    x_window = np.asarray(x_window, dtype=float)
    y_window = np.asarray(y_window, dtype=float)
    if x_window.shape[0] != y_window.shape[0]:
        raise EstimatorError("X and Y windows must have the same number of rows")
    xs, sx = standardize(x_window, x_names)
    ys, sy = standardize(y_window, y_names)
    return correlation_from_standardized(xs, ys, sx, sy)


def decompose(t: CorrelationTriplet, method: str = "lapack") -> SpectralDecomposition:
    return svd_thin(t.cxy, method=method)


def marginal_projections(t: CorrelationTriplet, d: SpectralDecomposition) -> ProjectedSpectrum:
    n_x, n_y = t.n_x, t.n_y
    r, p = min(n_x, n_y), max(n_x, n_y)
    u_full = complete_orthonormal(d.u, n_x) if n_x > r else d.u
    v_full = complete_orthonormal(d.v, n_y) if n_y > r else d.v
    for basis in (u_full, v_full):
        if np.max(np.abs(basis.T @ basis - np.eye(basis.shape[1]))) > 1e-8:
            raise LinalgError("completed singular basis is not orthonormal")
    gx = np.einsum("ik,ij,jk->k", u_full, t.cxx, u_full)
    gy = np.einsum("ik,ij,jk->k", v_full, t.cyy, v_full)
    extra = float(gy[r:].sum() if n_y >= n_x else gx[r:].sum())
    s_pad = np.zeros(p)
    s_pad[:r] = d.s
    gx_pad = np.zeros(p)
    gx_pad[:n_x] = gx
    gy_pad = np.zeros(p)
    gy_pad[:n_y] = gy
    return ProjectedSpectrum(s_pad, gx_pad, gy_pad, extra, r, n_x, n_y)


def reconstruct_rie(d: SpectralDecomposition, s_clean) -> np.ndarray:
    s_clean = np.asarray(s_clean, dtype=float)
    if s_clean.shape != d.s.shape:
        raise EstimatorError(f"expected {d.s.shape[0]} cleaned values, got {s_clean.shape}")
    return d.reconstruct(s_clean)


def rescale_to_covariance(cleaned, std_x, std_y) -> np.ndarray:
    std_x = np.asarray(std_x, dtype=float)
    std_y = np.asarray(std_y, dtype=float)
    if np.any(std_x <= 0) or np.any(std_y <= 0):
        raise EstimatorError("standard deviations must be positive")
    return std_x[:, None] * np.asarray(cleaned, dtype=float) * std_y[None, :]


def _isotonic(s_hat: np.ndarray, s_clean: np.ndarray) -> np.ndarray:
    order = np.argsort(s_hat, kind="stable")
    fitted = pava_isotonic(s_hat[order], s_clean[order])
    out = np.empty_like(s_clean)
    out[order] = fitted
    return out


def mle_clean(t: CorrelationTriplet, d: SpectralDecomposition | None = None) -> ShrinkageResult:
    d = decompose(t) if d is None else d
    return ShrinkageResult("mle", d.s.copy(), reconstruct_rie(d, d.s), d)


def bbp_functionals(
    s: np.ndarray,
    gamma_a: np.ndarray,
    gamma_b: np.ndarray,
    gamma_extra: float,
    n_large: int,
    dt_in: int,
) -> BBPFunctionals:
    """Resolvent-type sums evaluated at ``zeta_k = s_k + i eta``.

    ``gamma_a`` are projections on the smaller side, ``gamma_b`` on the larger side;
    ``gamma_extra`` is the larger side's energy beyond the first ``r`` directions.
    """
    r = s.shape[0]
    eta = float((r * n_large * dt_in) ** (-1.0 / 12.0))
    if not np.isfinite(eta) or eta <= 0:
        raise EstimatorError(f"invalid eta {eta}")
    zeta = s + 1j * eta
    z2 = zeta * zeta
    inv = 1.0 / (z2[:, None] - (s * s)[None, :])
    h = inv @ (s * s) / dt_in
    a = inv @ gamma_a / dt_in
    b = (inv @ gamma_b + gamma_extra / z2) / dt_in
    theta = z2 * a * b / (1.0 + h)
    l = h - theta / (1.0 + h - theta)
    return BBPFunctionals(eta, zeta, h, a, b, theta, l)


def bbp_clean(
    t: CorrelationTriplet,
    apply_isotonic: bool = False,
    d: SpectralDecomposition | None = None,
    proj: ProjectedSpectrum | None = None,
) -> ShrinkageResult:
    d = decompose(t) if d is None else d
    proj = marginal_projections(t, d) if proj is None else proj
    r = proj.r
    if t.n_x <= t.n_y:
        ga, gb, n_large = proj.gamma_x_pad[:r], proj.gamma_y_pad[:r], t.n_y
    else:
        ga, gb, n_large = proj.gamma_y_pad[:r], proj.gamma_x_pad[:r], t.n_x
    f = bbp_functionals(d.s, ga, gb, proj.gamma_extra, n_large, t.dt_in)
    im_h = f.h.imag
    if np.any(im_h == 0.0) or not np.all(np.isfinite(im_h)):
        raise EstimatorError("degenerate BBP functionals: Im H vanishes")
    ratio = f.l.imag / im_h
    s_clean = d.s * np.maximum(ratio, 0.0)
    if apply_isotonic:
        s_clean = _isotonic(d.s, s_clean)
    return ShrinkageResult("bbp", s_clean, reconstruct_rie(d, s_clean), d)


def _fold_indices(t: int, folds: int, split_mode: str, num_splits: int, shuffle: bool, rng):
    if split_mode == "kfold":
        idx = rng.permutation(t) if shuffle else np.arange(t)
        for test in np.array_split(idx, folds):
            yield np.setdiff1d(idx, test, assume_unique=True), test
    elif split_mode == "montecarlo":
        n_test = max(2, int(round(t / folds)))
        for _ in range(num_splits):
            idx = rng.permutation(t)
            yield idx[n_test:], idx[:n_test]
    else:
        raise EstimatorError(f"unknown split mode {split_mode!r}")


def cv_clean(
    x_window,
    y_window,
    folds: int = 10,
    split_mode: str = "kfold",
    num_splits: int = 10,
    apply_isotonic: bool = True,
    shuffle: bool = True,
    rng=None,
    t: CorrelationTriplet | None = None,
    d: SpectralDecomposition | None = None,
) -> ShrinkageResult:
    """Cross-validated singular values, reconstructed in the full-sample basis.

    Standardisation happens once on the whole window; fold blocks are plain averages
    of ``x_t y_t^T`` over fold indices. Fold values are averaged by index ``k``.
    """
    x_window = np.asarray(x_window, dtype=float)
    y_window = np.asarray(y_window, dtype=float)
    n_obs = x_window.shape[0]
    if folds < 2 or n_obs < 2 * folds:
        raise EstimatorError(f"need folds >= 2 and T >= 2*folds (T={n_obs}, folds={folds})")
    rng = np.random.default_rng(0) if rng is None else rng
    xs, sx = standardize(x_window)
    ys, sy = standardize(y_window)
    if t is None:
        t = correlation_from_standardized(xs, ys, sx, sy)
    d = decompose(t) if d is None else d
    r = d.rank
    total = np.zeros(r)
    count = 0
    for train, test in _fold_indices(n_obs, folds, split_mode, num_splits, shuffle, rng):
        if train.size < 2 or test.size < 2:
            raise EstimatorError("every fold needs at least two observations")
        c_train = xs[train].T @ ys[train] / train.size
        c_test = xs[test].T @ ys[test] / test.size
        df = svd_thin(c_train)
        total += np.einsum("ik,ij,jk->k", df.u, c_test, df.v)
        count += 1
    s_clean = total / count
    if apply_isotonic:
        s_clean = _isotonic(d.s, s_clean)
    return ShrinkageResult("cv", s_clean, reconstruct_rie(d, s_clean), d)


def oracle_values(d: SpectralDecomposition, target) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    if target.shape != (d.u.shape[0], d.v.shape[0]):
        raise EstimatorError(f"target shape {target.shape} does not match {(d.u.shape[0], d.v.shape[0])}")
    return np.einsum("ik,ij,jk->k", d.u, target, d.v)


def oracle_clean(t: CorrelationTriplet, target, d: SpectralDecomposition | None = None) -> ShrinkageResult:
    d = decompose(t) if d is None else d
    s_star = oracle_values(d, target)
    return ShrinkageResult("oracle", s_star, reconstruct_rie(d, s_star), d)
