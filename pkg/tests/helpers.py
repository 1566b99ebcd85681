"""Shared fixtures for the neural gradient checks and the acceptance suite."""
import numpy as np

from xcov.neural import Architecture, forward, init_params, loss, loss_and_grad
from xcov.neural.training import synthetic_batch

SMALL_ARCH = Architecture(lstm1_hidden=8, lstm2_hidden=4, head_hidden=6)
KINK_MARGIN = 1e-4
FD_STEP = 1e-5


def _near_kink(params, batch, bounded):
    _, cache = forward(params, batch.tokens_x, batch.tokens_y, batch.s_hat, bounded, return_cache=True)
    pre1, pre_h = cache[1], cache[9]
    return min(np.abs(pre1).min(), np.abs(pre_h).min()) < KINK_MARGIN


def gradient_case(seed: int, bounded: bool = False, arch: Architecture = SMALL_ARCH):
    """Random parameters plus a small batch whose LeakyReLU inputs all sit away from 0.

    Central differences straddling the kink are not a test of the analytic gradient,
    so such draws are redrawn.
    """
    g = np.random.default_rng(seed)
    for _ in range(50):
        params = init_params(arch, g, zero_head=False)
        batch = synthetic_batch("finite_rank", 3, 5, 40, [0.4, 0.7], g)
        if not _near_kink(params, batch, bounded):
            return params, batch
    raise RuntimeError(f"seed {seed}: could not avoid the activation kink")


def fd_relative_errors(params, batch, bounded: bool = False, max_entries: int = 60, seed: int = 0):
    """Normwise relative error per parameter group on (a sample of) entries."""
    _, grads = loss_and_grad(params, batch, bounded)
    g = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = g.choice(flat.size, size=max_entries, replace=False)
        fd = np.empty(idx.size)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + FD_STEP
            up = loss(params, batch, bounded)
            flat[i] = old - FD_STEP
            down = loss(params, batch, bounded)
            flat[i] = old
            fd[j] = (up - down) / (2 * FD_STEP)
        an = grads[name].reshape(-1)[idx]
        scale = max(np.linalg.norm(fd), np.linalg.norm(an), 1e-12)
        errors[name] = float(np.linalg.norm(fd - an) / scale)
    return errors


def exhaustive_isotonic(y, w=None):
    """Least-squares monotone fit by enumerating every contiguous block partition."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    n = y.size
    best, best_fit = np.inf, None
    for mask in range(1 << (n - 1)):
        cuts = [0] + [i + 1 for i in range(n - 1) if mask >> i & 1] + [n]
        fit = np.empty(n)
        means = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            m = np.dot(w[a:b], y[a:b]) / w[a:b].sum()
            fit[a:b] = m
            means.append(m)
        if np.any(np.diff(means) < -1e-12 * max(1.0, np.abs(y).max())):
            continue
        sse = float(np.dot(w, (y - fit) ** 2))
        if sse < best:
            best, best_fit = sse, fit
    return best_fit
