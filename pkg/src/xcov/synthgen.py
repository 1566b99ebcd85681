"""Seeded population models (Benchmarks I-IV) and Gaussian observation sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import cholesky, equicorrelation_sqrt_coeffs, floor_eigenvalues, svd_thin

BENCHMARKS = ("finite_rank", "heavy_bulk", "white_heavy", "mode")
GAUSSIAN = "gaussian"


class BenchmarkError(ValueError):
    pass


@dataclass(frozen=True)
class RngStream:
    """Counter-based (Philox) stream addressed by ``(master_seed, stream_id, *sub)``."""

    master_seed: int
    stream_id: int = 0

    def generator(self, *sub: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *sub))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class PopulationModel:
    sigma_xx: np.ndarray
    sigma_xy: np.ndarray
    sigma_yy: np.ndarray
    benchmark: str
    params: dict = field(default_factory=dict)

    @property
    def n_x(self) -> int:
        return self.sigma_xy.shape[0]

    @property
    def n_y(self) -> int:
        return self.sigma_xy.shape[1]

    def block(self) -> np.ndarray:
        return np.block([[self.sigma_xx, self.sigma_xy], [self.sigma_xy.T, self.sigma_yy]])

    def correlation_form(self) -> "PopulationModel":
        dx = 1.0 / np.sqrt(np.diag(self.sigma_xx))
        dy = 1.0 / np.sqrt(np.diag(self.sigma_yy))
        cxx = dx[:, None] * self.sigma_xx * dx[None, :]
        cyy = dy[:, None] * self.sigma_yy * dy[None, :]
        np.fill_diagonal(cxx, 1.0)
        np.fill_diagonal(cyy, 1.0)
        return PopulationModel(cxx, dx[:, None] * self.sigma_xy * dy[None, :], cyy, self.benchmark, self.params)

    @property
    def target(self) -> np.ndarray:
        """Population cross-correlation used for scoring."""
        return self.correlation_form().sigma_xy


def haar_orthogonal(n: int, rng) -> np.ndarray:
    if n < 1:
        raise BenchmarkError("n must be >= 1")
    g = _as_generator(rng)
    q, r = np.linalg.qr(g.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def _check_dims(n_x: int, n_y: int) -> None:
    if n_x < 1 or n_y < 1:
        raise BenchmarkError("dimensions must be positive")


def build_finite_rank(n_x: int, n_y: int, xi: float, rng, sigma2: float = 0.5) -> PopulationModel:
    _check_dims(n_x, n_y)
    if not 0.0 <= xi <= 1.0:
        raise BenchmarkError(f"spike fraction must lie in [0, 1], got {xi}")
    g = _as_generator(rng)
    r = min(n_x, n_y)
    rho = int(math.floor(xi * r + 1e-9))
    u = haar_orthogonal(n_x, g)
    v = haar_orthogonal(n_y, g)
    s = g.uniform(0.2, 0.5, size=rho)
    sxy = (u[:, :rho] * s) @ v[:, :rho].T
    syy = sxy.T @ sxy + sigma2 * np.eye(n_y)
    return PopulationModel(np.eye(n_x), sxy, 0.5 * (syy + syy.T), "finite_rank", {"xi": xi, "sigma2": sigma2})


def _heavy_entries(g: np.random.Generator, shape, alpha) -> np.ndarray:
    if alpha is None or alpha == GAUSSIAN:
        return g.standard_normal(shape)
    alpha = float(alpha)
    if not alpha > 1.0:
        raise BenchmarkError(f"tail exponent must exceed 1, got {alpha}")
    return g.standard_t(alpha, size=shape)


def _heavy_sigma(n_x: int, n_y: int, alpha, g) -> np.ndarray:
    n = n_x + n_y
    w = _heavy_entries(g, (n, 2 * n), alpha)
    sigma = w @ w.T / (2 * n)
    return 0.5 * (sigma + sigma.T)


def _split(sigma: np.ndarray, n_x: int):
    return sigma[:n_x, :n_x].copy(), sigma[:n_x, n_x:].copy(), sigma[n_x:, n_x:].copy()


def build_heavy_bulk(n_x: int, n_y: int, alpha, rng) -> PopulationModel:
    """``Sigma = W W^T / 2n`` with ``W`` Gaussian or Student-t(``alpha``) entries."""
    _check_dims(n_x, n_y)
    g = _as_generator(rng)
    sxx, sxy, syy = _split(_heavy_sigma(n_x, n_y, alpha, g), n_x)
    return PopulationModel(sxx, sxy, syy, "heavy_bulk", {"alpha": alpha})


def build_white_heavy(n_x: int, n_y: int, alpha, rng) -> PopulationModel:
    base = build_heavy_bulk(n_x, n_y, alpha, rng)
    s_max = float(svd_thin(base.sigma_xy).s[0])
    if s_max <= 0:
        raise BenchmarkError("cross block is zero; s_max degenerate")
    return PopulationModel(
        s_max * np.eye(n_x), base.sigma_xy, s_max * np.eye(n_y), "white_heavy", {"alpha": alpha, "s_max": s_max}
    )


def apply_equicorrelation_sqrt(sigma: np.ndarray, m: float) -> np.ndarray:
    """``M^{1/2} Sigma M^{1/2}`` for ``M = (1-m) I + m 11^T`` in O(n^2)."""
    n = sigma.shape[0]
    a, b = equicorrelation_sqrt_coeffs(n, m)
    row = sigma.sum(axis=0)
    total = row.sum()
    out = a * a * sigma + a * b * (row[:, None] + row[None, :]) + b * b * total
    return 0.5 * (out + out.T)


def build_mode(n_x: int, n_y: int, m: float, rng) -> PopulationModel:
    _check_dims(n_x, n_y)
    if not 0.0 <= m < 1.0:
        raise BenchmarkError(f"mode strength must lie in [0, 1), got {m}")
    g = _as_generator(rng)
    sigma = apply_equicorrelation_sqrt(_heavy_sigma(n_x, n_y, GAUSSIAN, g), m)
    dinv = 1.0 / np.sqrt(np.diag(sigma))
    corr = dinv[:, None] * sigma * dinv[None, :]
    np.fill_diagonal(corr, 1.0)
    sxx, sxy, syy = _split(corr, n_x)
    return PopulationModel(sxx, sxy, syy, "mode", {"m": m})


def build_benchmark(benchmark: str, n_x: int, n_y: int, param, rng) -> PopulationModel:
    benchmark = benchmark.replace("-", "_")
    if benchmark == "finite_rank":
        return build_finite_rank(n_x, n_y, float(param), rng)
    if benchmark == "heavy_bulk":
        return build_heavy_bulk(n_x, n_y, param, rng)
    if benchmark == "white_heavy":
        return build_white_heavy(n_x, n_y, param, rng)
    if benchmark == "mode":
        return build_mode(n_x, n_y, float(param), rng)
    raise BenchmarkError(f"unknown benchmark {benchmark!r}")


def parse_param(benchmark: str, value):
    """Benchmark parameter from CLI/config text: float, or ``gaussian`` for heavy families."""
    benchmark = benchmark.replace("-", "_")
    if isinstance(value, str) and value.lower() in (GAUSSIAN, "gauss", "inf"):
        if benchmark in ("heavy_bulk", "white_heavy"):
            return GAUSSIAN
        raise BenchmarkError(f"'gaussian' is not a valid parameter for {benchmark}")
    x = float(value)
    if benchmark == "finite_rank" and not 0.0 <= x <= 1.0:
        raise BenchmarkError("finite-rank parameter xi must lie in [0, 1]")
    if benchmark in ("heavy_bulk", "white_heavy") and not x > 1.0:
        raise BenchmarkError("tail exponent alpha must exceed 1")
    if benchmark == "mode" and not 0.0 <= x < 1.0:
        raise BenchmarkError("mode strength m must lie in [0, 1)")
    if benchmark not in BENCHMARKS:
        raise BenchmarkError(f"unknown benchmark {benchmark!r}")
    return x


def sampling_factor(model: PopulationModel, floor: float = 1e-12) -> np.ndarray:
    sigma = model.block()
    scale = max(1.0, float(np.max(np.abs(np.diag(sigma)))))
    return cholesky(floor_eigenvalues(sigma, floor * scale))


def sample_observations(model: PopulationModel, t: int, rng, factor: np.ndarray | None = None):
    """``t`` i.i.d. Gaussian draws of the concatenated vector, split into X and Y panels."""
    g = _as_generator(rng)
    low = sampling_factor(model) if factor is None else factor
    z = g.standard_normal((t, low.shape[0]))
    obs = z @ low.T
    return obs[:, : model.n_x], obs[:, model.n_x:]
