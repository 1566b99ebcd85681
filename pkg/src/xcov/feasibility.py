"""Compatibility of a cross-correlation block with fixed marginals.

The block matrix ``[[Cxx, Cxy], [Cxy^T, Cyy]]`` is PSD exactly when the whitened
block ``Cxx^{-1/2} Cxy Cyy^{-1/2}`` has all singular values (canonical
correlations) in [0, 1]; strictly below 1 gives positive definiteness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    INV_SQRT_FLOOR,
    IndefiniteMatrixError,
    LinalgError,
    as_matrix,
    svd_thin,
    sym_eig,
    sym_inv_sqrt,
    sym_sqrt,
)

DEFAULT_TOL = 1e-8


class FeasibilityError(LinalgError):
    pass


@dataclass(frozen=True)
class FeasibilityReport:
    canonical_s: np.ndarray
    max_canonical: float
    fraction_in_unit_interval: float
    feasible_psd: bool
    feasible_pd: bool
    block_min_eigenvalue: float
    tol: float

    @property
    def schur_agrees(self) -> bool:
        return self.feasible_psd == (self.block_min_eigenvalue >= -self.tol)


def _marginal_root(c, name: str, inverse: bool, floor: float) -> np.ndarray:
    try:
        return sym_inv_sqrt(c, floor) if inverse else sym_sqrt(c, floor)
    except IndefiniteMatrixError as exc:
        raise FeasibilityError(f"marginal block {name} is indefinite ({exc.min_eigenvalue:.3e})") from exc


def _shapes(cxx, cyy, cxy):
    cxx, cyy, cxy = as_matrix(cxx, "cxx"), as_matrix(cyy, "cyy"), as_matrix(cxy, "cxy")
    if cxy.shape != (cxx.shape[0], cyy.shape[0]):
        raise FeasibilityError(f"cross block {cxy.shape} incompatible with marginals {cxx.shape}, {cyy.shape}")
    return cxx, cyy, cxy


def whiten_cross_block(cxx, cyy, cxy, floor: float = INV_SQRT_FLOOR) -> np.ndarray:
    cxx, cyy, cxy = _shapes(cxx, cyy, cxy)
    return _marginal_root(cxx, "cxx", True, floor) @ cxy @ _marginal_root(cyy, "cyy", True, floor)


def unwhiten_cross_block(cxx, cyy, cw, floor: float = 0.0) -> np.ndarray:
    cxx, cyy, cw = _shapes(cxx, cyy, cw)
    return _marginal_root(cxx, "cxx", False, floor) @ cw @ _marginal_root(cyy, "cyy", False, floor)


def block_matrix(cxx, cyy, cxy) -> np.ndarray:
    cxx, cyy, cxy = _shapes(cxx, cyy, cxy)
    return np.block([[cxx, cxy], [cxy.T, cyy]])


def block_min_eigenvalue(cxx, cyy, cxy) -> float:
    return float(sym_eig(block_matrix(cxx, cyy, cxy))[0][-1])


def canonical_values(cxx, cyy, cxy, floor: float = INV_SQRT_FLOOR) -> np.ndarray:
    return svd_thin(whiten_cross_block(cxx, cyy, cxy, floor)).s


def feasibility_report(cxx, cyy, cxy, tol: float = DEFAULT_TOL) -> FeasibilityReport:
    s = canonical_values(cxx, cyy, cxy)
    top = float(s[0])
    return FeasibilityReport(
        canonical_s=s,
        max_canonical=top,
        fraction_in_unit_interval=float(np.mean(s <= 1.0 + tol)),
        feasible_psd=top <= 1.0 + tol,
        feasible_pd=top < 1.0 - tol,
        block_min_eigenvalue=block_min_eigenvalue(cxx, cyy, cxy),
        tol=tol,
    )


def clip_to_feasible(cxx, cyy, cxy, eps: float = 1e-6) -> np.ndarray:
    """Clip canonical singular values into [0, 1 - eps] and map back.

    Optional repair step; reports never call it.
    """
    d = svd_thin(whiten_cross_block(cxx, cyy, cxy))
    return unwhiten_cross_block(cxx, cyy, d.reconstruct(np.clip(d.s, 0.0, 1.0 - eps)))
