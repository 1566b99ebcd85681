"""Token sequences and training samples for the singular-value network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..estimators import (
    CorrelationTriplet,
    ProjectedSpectrum,
    decompose,
    marginal_projections,
    oracle_values,
)
from ..linalg import SpectralDecomposition


class TokenError(ValueError):
    pass


@dataclass(frozen=True)
class TokenSequence:
    """Rows ``[gamma_k, s_k, q]`` per stream, ``p = max(n_x, n_y)`` rows each."""

    tokens_x: np.ndarray
    tokens_y: np.ndarray
    r: int
    n_x: int
    n_y: int

    @property
    def p(self) -> int:
        return self.tokens_x.shape[0]

    @property
    def s_hat(self) -> np.ndarray:
        return self.tokens_x[: self.r, 1]

    def swapped(self) -> "TokenSequence":
        return TokenSequence(self.tokens_y, self.tokens_x, self.r, self.n_y, self.n_x)


def build_tokens(proj: ProjectedSpectrum, q_x: float, q_y: float) -> TokenSequence:
    p = proj.p
    for name, arr in (("s_pad", proj.s_pad), ("gamma_x_pad", proj.gamma_x_pad), ("gamma_y_pad", proj.gamma_y_pad)):
        if arr.shape != (p,):
            raise TokenError(f"{name} has length {arr.shape}, expected {p}")
    if p != max(proj.n_x, proj.n_y) or proj.r != min(proj.n_x, proj.n_y):
        raise TokenError("padded length inconsistent with dimensions")
    tx = np.column_stack([proj.gamma_x_pad, proj.s_pad, np.full(p, float(q_x))])
    ty = np.column_stack([proj.gamma_y_pad, proj.s_pad, np.full(p, float(q_y))])
    return TokenSequence(tx, ty, proj.r, proj.n_x, proj.n_y)


def tokens_from_triplet(t: CorrelationTriplet, d: SpectralDecomposition | None = None):
    d = decompose(t) if d is None else d
    proj = marginal_projections(t, d)
    return build_tokens(proj, t.q_x, t.q_y), d


@dataclass(frozen=True)
class Batch:
    """Equal-shape samples stacked for one forward pass.

    ``s_star`` are the target's in-basis diagonals and ``residual`` the target energy
    outside the empirical basis, so the Frobenius loss is evaluated in O(r).
    """

    tokens_x: np.ndarray
    tokens_y: np.ndarray
    s_hat: np.ndarray
    s_star: np.ndarray
    residual: np.ndarray
    n_x: int
    n_y: int

    @property
    def size(self) -> int:
        return self.tokens_x.shape[0]

    @property
    def r(self) -> int:
        return self.s_hat.shape[1]


def make_batch(samples) -> Batch:
    """Stack ``(TokenSequence, SpectralDecomposition, target)`` triples of one shape."""
    samples = list(samples)
    if not samples:
        raise TokenError("empty batch")
    tok0 = samples[0][0]
    tx, ty, sh, ss, res = [], [], [], [], []
    for tok, d, target in samples:
        if (tok.n_x, tok.n_y) != (tok0.n_x, tok0.n_y):
            raise TokenError("all samples in a batch must share (n_x, n_y)")
        target = np.asarray(target, dtype=float)
        if target.shape != (tok.n_x, tok.n_y):
            raise TokenError(f"target shape {target.shape} != {(tok.n_x, tok.n_y)}")
        s_star = oracle_values(d, target)
        tx.append(tok.tokens_x)
        ty.append(tok.tokens_y)
        sh.append(tok.s_hat)
        ss.append(s_star)
        res.append(float(np.sum(target * target) - np.sum(s_star * s_star)))
    return Batch(np.stack(tx), np.stack(ty), np.stack(sh), np.stack(ss), np.array(res), tok0.n_x, tok0.n_y)
