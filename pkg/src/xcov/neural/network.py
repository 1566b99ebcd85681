"""Two-stream singular-value network with hand-written backpropagation.

Layout: shared token encoder (3 -> 16 -> 2, LeakyReLU), additive stream fusion,
two stacked bidirectional LSTMs (128 and 64 units per direction, one bias vector
per gate block, gate order i, f, g, o), pointwise head (128 -> 252 -> 1, LeakyReLU).
The head emits a residual ``delta_k`` and ``s_clean = s_hat + delta`` on the first
``r`` positions.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tokens import Batch

LEAKY_SLOPE = 0.01


class NetworkError(RuntimeError):
    pass


@dataclass(frozen=True)
class Architecture:
    token_dim: int = 3
    encoder_hidden: int = 16
    embed_dim: int = 2
    lstm1_hidden: int = 128
    lstm2_hidden: int = 64
    head_hidden: int = 252
    bounded: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)


def parameter_shapes(arch: Architecture) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in serialisation order."""
    shapes = [
        ("encoder.w1", (arch.encoder_hidden, arch.token_dim)),
        ("encoder.b1", (arch.encoder_hidden,)),
        ("encoder.w2", (arch.embed_dim, arch.encoder_hidden)),
        ("encoder.b2", (arch.embed_dim,)),
    ]
    for layer, n_in, hid in (
        ("lstm1", arch.embed_dim, arch.lstm1_hidden),
        ("lstm2", 2 * arch.lstm1_hidden, arch.lstm2_hidden),
    ):
        for direction in ("fwd", "bwd"):
            shapes += [
                (f"{layer}.{direction}.w_ih", (4 * hid, n_in)),
                (f"{layer}.{direction}.w_hh", (4 * hid, hid)),
                (f"{layer}.{direction}.b", (4 * hid,)),
            ]
    shapes += [
        ("head.w1", (arch.head_hidden, 2 * arch.lstm2_hidden)),
        ("head.b1", (arch.head_hidden,)),
        ("head.w2", (1, arch.head_hidden)),
        ("head.b2", (1,)),
    ]
    return shapes


def init_params(arch: Architecture, rng, zero_head: bool = True) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, forget-gate bias 1, final head layer zero."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    params = {}
    for name, shape in parameter_shapes(arch):
        if name.startswith("lstm") and name.endswith(".b"):
            hid = shape[0] // 4
            b = np.zeros(shape)
            b[hid: 2 * hid] = 1.0
            params[name] = b
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
    if zero_head:
        params["head.w2"][:] = 0.0
        params["head.b2"][:] = 0.0
    return params


def zeros_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def count_parameters(params: dict[str, np.ndarray], prefix: str = "") -> int:
    return int(sum(v.size for k, v in params.items() if k.startswith(prefix)))


def _leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_grad(x):
    return np.where(x > 0, 1.0, LEAKY_SLOPE)


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(x: np.ndarray, w_ih, w_hh, b):
    """Unidirectional LSTM over axis 1 of ``x`` (batch, time, features)."""
    n_b, n_t, _ = x.shape
    hid = w_hh.shape[1]
    xw = x @ w_ih.T + b
    h = np.zeros((n_b, hid))
    c = np.zeros((n_b, hid))
    hs = np.empty((n_b, n_t, hid))
    cs = np.empty((n_b, n_t, hid))
    acts = np.empty((n_b, n_t, 4 * hid))
    w_hh_t = w_hh.T
    for t in range(n_t):
        z = xw[:, t] + h @ w_hh_t
        ifo = _sigmoid(z)
        g = np.tanh(z[:, 2 * hid: 3 * hid])
        i, f, o = ifo[:, :hid], ifo[:, hid: 2 * hid], ifo[:, 3 * hid:]
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[:, t] = h
        cs[:, t] = c
        acts[:, t, : 2 * hid] = ifo[:, : 2 * hid]
        acts[:, t, 2 * hid: 3 * hid] = g
        acts[:, t, 3 * hid:] = o
    return hs, (x, hs, cs, acts)


def lstm_backward(dhs: np.ndarray, cache, w_ih, w_hh):
    x, hs, cs, acts = cache
    n_b, n_t, hid = hs.shape
    dz_all = np.empty_like(acts)
    dh_next = np.zeros((n_b, hid))
    dc_next = np.zeros((n_b, hid))
    dw_hh = np.zeros_like(w_hh)
    for t in range(n_t - 1, -1, -1):
        a = acts[:, t]
        i, f, g, o = a[:, :hid], a[:, hid: 2 * hid], a[:, 2 * hid: 3 * hid], a[:, 3 * hid:]
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(c)
        tc = np.tanh(c)
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :hid] = dc * g * i * (1.0 - i)
        dz[:, hid: 2 * hid] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * hid: 3 * hid] = dc * i * (1.0 - g * g)
        dz[:, 3 * hid:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ w_hh
        if t > 0:
            dw_hh += dz.T @ hs[:, t - 1]
    dw_ih = _flat(dz_all).T @ _flat(x)
    db = dz_all.sum(axis=(0, 1))
    dx = dz_all @ w_ih
    return dx, dw_ih, dw_hh, db


def _bilstm_forward(x, params, layer):
    pf = [params[f"{layer}.fwd.{k}"] for k in ("w_ih", "w_hh", "b")]
    pb = [params[f"{layer}.bwd.{k}"] for k in ("w_ih", "w_hh", "b")]
    hf, cf = lstm_forward(x, *pf)
    hb, cb = lstm_forward(x[:, ::-1], *pb)
    return np.concatenate([hf, hb[:, ::-1]], axis=2), (cf, cb)


def _bilstm_backward(dout, cache, params, grads, layer):
    cf, cb = cache
    hid = params[f"{layer}.fwd.w_hh"].shape[1]
    dx = np.zeros(cf[0].shape)
    for direction, c, d in (("fwd", cf, dout[:, :, :hid]), ("bwd", cb, dout[:, ::-1, hid:])):
        w_ih, w_hh = params[f"{layer}.{direction}.w_ih"], params[f"{layer}.{direction}.w_hh"]
        dxi, dw_ih, dw_hh, db = lstm_backward(d, c, w_ih, w_hh)
        grads[f"{layer}.{direction}.w_ih"] += dw_ih
        grads[f"{layer}.{direction}.w_hh"] += dw_hh
        grads[f"{layer}.{direction}.b"] += db
        dx += dxi if direction == "fwd" else dxi[:, ::-1]
    return dx


def _check(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NetworkError(f"non-finite activation in {name}")


def forward(params, tokens_x, tokens_y, s_hat, bounded: bool = False, return_cache: bool = False):
    """Residuals ``delta`` and cleaned values for batched tokens (batch, p, 3).

    Single unbatched sequences of shape (p, 3) are accepted too.
    """
    single = np.ndim(tokens_x) == 2
    if single:
        tokens_x, tokens_y, s_hat = tokens_x[None], tokens_y[None], np.asarray(s_hat)[None]
    r = s_hat.shape[1]
    n_b = tokens_x.shape[0]
    tok = np.concatenate([tokens_x, tokens_y], axis=0)
    pre1 = tok @ params["encoder.w1"].T + params["encoder.b1"]
    act1 = _leaky(pre1)
    emb = act1 @ params["encoder.w2"].T + params["encoder.b2"]
    _check("encoder", emb)
    z = emb[:n_b] + emb[n_b:]
    h1, c1 = _bilstm_forward(z, params, "lstm1")
    _check("lstm1", h1)
    h2, c2 = _bilstm_forward(h1, params, "lstm2")
    _check("lstm2", h2)
    hk = h2[:, :r]
    pre_h = hk @ params["head.w1"].T + params["head.b1"]
    act_h = _leaky(pre_h)
    delta = (act_h @ params["head.w2"].T)[..., 0] + params["head.b2"][0]
    _check("head", delta)
    if bounded:
        s_clean = s_hat * _sigmoid(delta)
    else:
        s_clean = s_hat + delta
    out = (delta[0], s_clean[0]) if single else (delta, s_clean)
    if return_cache:
        cache = (tok, pre1, act1, z, h1, c1, h2, c2, hk, pre_h, act_h, delta, s_hat, r, n_b)
        return out, cache
    return out


def backward_from_output(params, cache, d_s_clean, bounded: bool = False) -> dict[str, np.ndarray]:
    """Gradient of a scalar objective given its derivative w.r.t. ``s_clean``."""
    tok, pre1, act1, z, h1, c1, h2, c2, hk, pre_h, act_h, delta, s_hat, r, n_b = cache
    grads = zeros_like(params)
    if bounded:
        sg = _sigmoid(delta)
        d_delta = d_s_clean * s_hat * sg * (1.0 - sg)
    else:
        d_delta = d_s_clean
    grads["head.b2"][0] = d_delta.sum()
    grads["head.w2"][0] = d_delta.ravel() @ _flat(act_h)
    d_act_h = d_delta[..., None] * params["head.w2"][0]
    d_pre_h = d_act_h * _leaky_grad(pre_h)
    grads["head.w1"] = _flat(d_pre_h).T @ _flat(hk)
    grads["head.b1"] = d_pre_h.sum(axis=(0, 1))
    dh2 = np.zeros(h2.shape)
    dh2[:, :r] = d_pre_h @ params["head.w1"]
    dh1 = _bilstm_backward(dh2, c2, params, grads, "lstm2")
    dz = _bilstm_backward(dh1, c1, params, grads, "lstm1")
    # shared encoder: both streams receive the fused gradient
    d_emb = np.concatenate([dz, dz], axis=0)
    grads["encoder.w2"] = _flat(d_emb).T @ _flat(act1)
    grads["encoder.b2"] = d_emb.sum(axis=(0, 1))
    d_pre1 = (d_emb @ params["encoder.w2"]) * _leaky_grad(pre1)
    grads["encoder.w1"] = _flat(d_pre1).T @ _flat(tok)
    grads["encoder.b1"] = d_pre1.sum(axis=(0, 1))
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NetworkError(f"non-finite gradient for {name}")
    return grads


def batch_loss(s_clean: np.ndarray, batch: Batch) -> float:
    per = (np.sum((s_clean - batch.s_star) ** 2, axis=1) + batch.residual) / (batch.n_x * batch.n_y)
    return float(per.mean())


def loss(params, batch: Batch, bounded: bool = False) -> float:
    _, s_clean = forward(params, batch.tokens_x, batch.tokens_y, batch.s_hat, bounded)
    return batch_loss(s_clean, batch)


def loss_and_grad(params, batch: Batch, bounded: bool = False):
    (_, s_clean), cache = forward(params, batch.tokens_x, batch.tokens_y, batch.s_hat, bounded, return_cache=True)
    value = batch_loss(s_clean, batch)
    d_s = 2.0 * (s_clean - batch.s_star) / (batch.n_x * batch.n_y * batch.size)
    return value, backward_from_output(params, cache, d_s, bounded)


def backward(params, batch: Batch, bounded: bool = False) -> dict[str, np.ndarray]:
    return loss_and_grad(params, batch, bounded)[1]
