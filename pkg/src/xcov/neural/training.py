"""Adam training with gradient accumulation over variable-shape micro-batches."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..estimators import sample_cross_correlation
from ..synthgen import GAUSSIAN, RngStream, build_benchmark, sample_observations
from .model import NeuralModel
from .network import Architecture, loss_and_grad, zeros_like
from .optim import AdamState, adam_step
from .tokens import Batch, make_batch, tokens_from_triplet

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    decay_per_epoch: float = 0.99
    epochs: int = 50
    steps_per_epoch: int = 500
    batch_size: int = 32
    accumulation_steps: int = 4
    n_range: tuple = (50, 500)
    nu_range: tuple = (0.05, 0.95)
    dt_range: tuple = (200, 1200)
    dt_out: int = 240
    benchmark: str = "finite_rank"
    param_range: tuple | None = (0.2, 0.35)
    master_seed: int = 0
    init_seed: int = 0
    architecture: dict = field(default_factory=dict)
    mode_removal: bool = False
    shuffle: bool = False
    train_end: str | None = None

    def __post_init__(self):
        for name in ("n_range", "nu_range", "dt_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
            setattr(self, name, (lo, hi))
        if self.param_range is not None:
            self.param_range = tuple(self.param_range)
        if self.accumulation_steps < 1 or self.batch_size < 1:
            raise ValueError("batch_size and accumulation_steps must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def arch(self) -> Architecture:
        return Architecture.from_dict(self.architecture) if self.architecture else Architecture()

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_per_epoch**epoch


def split_dims(n: int, nu: float) -> tuple[int, int]:
    n_x = min(max(int(math.ceil(nu * n)), 1), n - 1)
    return n_x, n - n_x


def draw_shape(g: np.random.Generator, n_range, nu_range, dt_range):
    n = int(g.integers(n_range[0], n_range[1] + 1))
    nu = float(g.uniform(*nu_range))
    dt = int(g.integers(dt_range[0], dt_range[1] + 1))
    return (*split_dims(max(n, 2), nu), dt)


def synthetic_batch(benchmark: str, n_x: int, n_y: int, dt: int, params, g: np.random.Generator) -> Batch:
    samples = []
    for param in params:
        pop = build_benchmark(benchmark, n_x, n_y, param, g)
        x, y = sample_observations(pop, dt, g)
        tok, d = tokens_from_triplet(sample_cross_correlation(x, y))
        samples.append((tok, d, pop.target))
    return make_batch(samples)


class SyntheticSampler:
    """Endless stream of on-the-fly synthetic micro-batches.

    Micro-batch ``j`` is generated from stream ``(master_seed, j)``: one shape
    ``(n, nu, dt)`` per micro-batch, one benchmark parameter per instance.
    """

    def __init__(self, config: TrainConfig, limit: int | None = None):
        self.config = config
        self.limit = limit
        self.index = 0

    def __iter__(self):
        return self

    def draw_params(self, g, size):
        c = self.config
        if c.param_range is None:
            return [GAUSSIAN] * size
        return list(g.uniform(c.param_range[0], c.param_range[1], size=size))

    def __next__(self) -> Batch:
        if self.limit is not None and self.index >= self.limit:
            raise StopIteration
        c = self.config
        g = RngStream(c.master_seed, self.index).generator()
        self.index += 1
        n_x, n_y, dt = draw_shape(g, c.n_range, c.nu_range, c.dt_range)
        return synthetic_batch(c.benchmark, n_x, n_y, dt, self.draw_params(g, c.batch_size), g)


def accumulate(params, batches, bounded: bool = False):
    """Equal-weight mean of micro-batch losses and gradients."""
    total = zeros_like(params)
    losses = []
    for batch in batches:
        value, grads = loss_and_grad(params, batch, bounded)
        losses.append(value)
        for k, g in grads.items():
            total[k] += g
    n = len(losses)
    return float(np.mean(losses)), {k: g / n for k, g in total.items()}


def train(config: TrainConfig, sampler, model: NeuralModel | None = None, callback=None) -> NeuralModel:
    """Run ``epochs * steps_per_epoch`` Adam updates; learning rate decays per epoch."""
    if model is None:
        model = NeuralModel.initial(config.arch(), config.init_seed)
    params = {k: v.copy() for k, v in model.params.items()}
    state = AdamState.for_params(params)
    it = iter(sampler)
    bounded = model.arch.bounded
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        for step in range(config.steps_per_epoch):
            try:
                batches = [next(it) for _ in range(config.accumulation_steps)]
            except StopIteration:
                raise TrainingError(f"sampler exhausted at epoch {epoch}, step {step}") from None
            value, grads = accumulate(params, batches, bounded)
            params, state = adam_step(params, grads, state, lr)
            if callback is not None:
                callback(epoch, step, value, lr)
        log.info("epoch %d done, lr %.3g", epoch, lr)
    echo = config.to_dict()
    return NeuralModel(model.arch, params, echo)
