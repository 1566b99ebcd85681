"""Experiment orchestration: synthetic Monte Carlo runs and walk-forward evaluation
on return panels, with percentile-bootstrap confidence intervals.

Every simulation index owns its RNG stream, so results do not depend on how many
worker threads run them.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .estimators import (
    bbp_clean,
    cv_clean,
    decompose,
    marginal_projections,
    mle_clean,
    oracle_clean,
    sample_cross_correlation,
)
from .linalg import frobenius_mse
from .synthgen import RngStream, build_benchmark, parse_param, sample_observations

log = logging.getLogger(__name__)

ESTIMATORS = ("mle", "bbp", "cv", "nn", "oracle")
RESULT_COLUMNS = ("estimator", "condition", "param", "mean_mse", "ci_low", "ci_high", "n_sim", "seconds")
BOOTSTRAP_STREAM = 1 << 40


class HarnessError(ValueError):
    pass


class PanelError(HarnessError):
    pass


# ---------------------------------------------------------------- panels


@dataclass(frozen=True)
class ReturnsPanel:
    dates: np.ndarray
    assets: tuple
    returns: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        returns = np.asarray(self.returns, dtype=float)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", tuple(str(a) for a in self.assets))
        object.__setattr__(self, "returns", returns)
        if returns.ndim != 2 or returns.shape != (dates.shape[0], len(self.assets)):
            raise PanelError(f"returns shape {returns.shape} does not match dates/assets")
        if returns.shape[0] < 2:
            raise PanelError("panel needs at least two dates")
        if np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise PanelError("dates must be strictly increasing")
        if not np.all(np.isfinite(returns)):
            row = int(np.argwhere(~np.isfinite(returns))[0, 0])
            raise PanelError(f"missing or non-finite return on {dates[row]}")

    @property
    def n_dates(self) -> int:
        return self.returns.shape[0]

    def index_of(self, date) -> int:
        """First position whose date is on or after ``date``."""
        return int(np.searchsorted(self.dates, np.datetime64(date, "D"), side="left"))


def read_panel_csv(path) -> ReturnsPanel:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        if not header or header[0].strip().lower() != "date":
            raise PanelError(f"{path}:1: first header column must be 'date'")
        if len(header) < 2:
            raise PanelError(f"{path}:1: no asset columns")
        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PanelError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                dates.append(np.datetime64(row[0].strip(), "D"))
            except ValueError:
                raise PanelError(f"{path}:{lineno}: bad date {row[0]!r}") from None
            values = []
            for col, cell in enumerate(row[1:], start=1):
                cell = cell.strip()
                if cell == "":
                    raise PanelError(f"{path}:{lineno}: missing value for {header[col]!r}")
                try:
                    values.append(float(cell))
                except ValueError:
                    raise PanelError(f"{path}:{lineno}: bad number {cell!r} for {header[col]!r}") from None
            rows.append(values)
    return ReturnsPanel(np.array(dates), [h.strip() for h in header[1:]], np.array(rows))


def write_panel_csv(panel: ReturnsPanel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *panel.assets])
        for d, row in zip(panel.dates, panel.returns):
            w.writerow([str(d), *(repr(float(v)) for v in row)])


# ---------------------------------------------------------------- configs and results


@dataclass
class ExperimentConfig:
    benchmark: str | None = "finite_rank"
    param: object = 0.2
    estimators: list = field(default_factory=lambda: ["mle", "bbp", "cv", "oracle"])
    n_sim: int = 100
    n_x: int = 200
    n_y: int = 350
    n: int | None = None
    nu: float | None = None
    n_range: list | None = None
    nu_range: list | None = None
    dt_in: int = 500
    dt_out: int = 240
    shuffle: bool = False
    mode_removal: bool = False
    bootstrap_copies: int = 10_000
    master_seed: int = 0
    folds: int = 10
    cv_split_mode: str = "kfold"
    cv_num_splits: int = 10
    cv_isotonic: bool = True
    bbp_isotonic: bool = False
    periods: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_sim < 1:
            raise HarnessError("n_sim must be >= 1")
        if self.dt_out < 1 or self.dt_in < 2:
            raise HarnessError("dt_in must be >= 2 and dt_out >= 1")
        if self.n_x < 1 or self.n_y < 1:
            raise HarnessError("dimensions must be positive")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise HarnessError(f"unknown estimators {sorted(unknown)}")
        if self.bootstrap_copies < 1:
            raise HarnessError("bootstrap_copies must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise HarnessError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def window_ranges(self):
        """``(n_range, nu_range, dt_range)`` used when drawing real-data windows."""
        if self.n_range is not None:
            n_range = tuple(self.n_range)
        elif self.n is not None:
            n_range = (self.n, self.n)
        else:
            n_range = (self.n_x + self.n_y,) * 2
        if self.nu_range is not None:
            nu_range = tuple(self.nu_range)
        elif self.nu is not None:
            nu_range = (self.nu, self.nu)
        else:
            frac = self.n_x / (self.n_x + self.n_y)
            nu_range = (frac, frac)
        return n_range, nu_range, (self.dt_in, self.dt_in)


@dataclass(frozen=True)
class ResultRow:
    estimator: str
    condition: str
    param: str
    mean_mse: float
    ci_low: float
    ci_high: float
    n_sim: int
    seconds: float = float("nan")
    failures: int = 0


def _fmt(x: float) -> str:
    # Python's shortest-repr rounding is correctly rounded, ties to even
    return format(float(x), ".6g")


def results_to_csv(rows, include_timing: bool = False) -> str:
    lines = [",".join(RESULT_COLUMNS)]
    for r in rows:
        secs = _fmt(r.seconds) if include_timing and math.isfinite(r.seconds) else ""
        cells = [r.estimator, r.condition, r.param, _fmt(r.mean_mse), _fmt(r.ci_low), _fmt(r.ci_high), str(r.n_sim), secs]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_results_csv(rows, path, include_timing: bool = False) -> None:
    Path(path).write_text(results_to_csv(rows, include_timing))


def read_results_csv(path) -> list[ResultRow]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                ResultRow(
                    rec["estimator"],
                    rec["condition"],
                    rec["param"],
                    float(rec["mean_mse"]),
                    float(rec["ci_low"]),
                    float(rec["ci_high"]),
                    int(rec["n_sim"]),
                    float(rec["seconds"]) if rec["seconds"] else float("nan"),
                )
            )
    return out


# ---------------------------------------------------------------- statistics


def bootstrap_ci(samples, copies: int = 10_000, level: float = 0.95, rng=None) -> tuple[float, float, float]:
    """Mean and percentile-bootstrap interval of the mean."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise HarnessError("bootstrap of an empty sample")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    mean = float(x.mean())
    means = np.empty(copies)
    chunk = max(1, 2_000_000 // x.size)
    for start in range(0, copies, chunk):
        stop = min(copies, start + chunk)
        idx = rng.integers(0, x.size, size=(stop - start, x.size))
        means[start:stop] = x[idx].mean(axis=1)
    alpha = 0.5 * (1.0 - level)
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return mean, float(min(low, mean)), float(max(high, mean))


# ---------------------------------------------------------------- estimator evaluation


def thread_count(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("XCOV_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def _map(fn, items, threads):
    threads = thread_count(threads)
    if threads == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def score_estimators(x, y, target, estimators, config: ExperimentConfig, cv_rng, model=None) -> dict:
    """Frobenius MSE of every requested estimator against ``target``.

    A failing estimator scores NaN and leaves the others untouched.
    """
    t = sample_cross_correlation(x, y)
    d = decompose(t)
    proj = marginal_projections(t, d)
    out = {}
    for name in estimators:
        try:
            if name == "mle":
                res = mle_clean(t, d)
            elif name == "bbp":
                res = bbp_clean(t, config.bbp_isotonic, d=d, proj=proj)
            elif name == "cv":
                res = cv_clean(
                    x, y, config.folds, config.cv_split_mode, config.cv_num_splits, config.cv_isotonic,
                    rng=cv_rng, t=t, d=d,
                )
            elif name == "oracle":
                res = oracle_clean(t, target, d)
            elif name == "nn":
                if model is None:
                    raise HarnessError("estimator 'nn' requires a model")
                res = model.clean(t, d)
            else:
                raise HarnessError(f"unknown estimator {name!r}")
            out[name] = frobenius_mse(res.cleaned, target)
        except Exception as exc:  # noqa: BLE001 - isolate per-estimator failures
            log.warning("estimator %s failed: %s", name, exc)
            out[name] = float("nan")
    return out


def aggregate(per_draw: list[dict], estimators, condition: str, param: str, config: ExperimentConfig,
              seconds: dict, stream_offset: int = 0) -> list[ResultRow]:
    rows = []
    for name in estimators:
        vals = np.array([d[name] for d in per_draw], dtype=float)
        ok = vals[np.isfinite(vals)]
        failures = int(vals.size - ok.size)
        if ok.size == 0:
            rows.append(ResultRow(name, condition, param, float("nan"), float("nan"), float("nan"), 0,
                                  seconds.get(name, float("nan")), failures))
            continue
        # same resample stream for every estimator: equal scores give equal intervals
        g = RngStream(config.master_seed, BOOTSTRAP_STREAM + stream_offset).generator()
        mean, low, high = bootstrap_ci(ok, config.bootstrap_copies, 0.95, g)
        rows.append(ResultRow(name, condition, param, mean, low, high, int(ok.size), seconds.get(name, float("nan")), failures))
    return rows


def run_synthetic_benchmark(config: ExperimentConfig, threads: int | None = None, model=None) -> list[ResultRow]:
    if config.benchmark is None:
        raise HarnessError("synthetic run needs a benchmark")
    param = parse_param(config.benchmark, config.param)
    estimators = list(config.estimators)

    def one(i: int) -> dict:
        stream = RngStream(config.master_seed, i)
        g = stream.generator()
        pop = build_benchmark(config.benchmark, config.n_x, config.n_y, param, g)
        x, y = sample_observations(pop, config.dt_in, g)
        return score_estimators(x, y, pop.target, estimators, config, stream.generator(1), model)

    start = time.perf_counter()
    per_draw = _map(one, range(config.n_sim), threads)
    elapsed = time.perf_counter() - start
    seconds = {name: elapsed for name in estimators}
    return aggregate(per_draw, estimators, config.benchmark.replace("-", "_"), str(param), config, seconds)


# ---------------------------------------------------------------- real-data windows


@dataclass(frozen=True)
class Window:
    x: np.ndarray
    y: np.ndarray
    oos_x: np.ndarray
    oos_y: np.ndarray
    x_assets: tuple
    y_assets: tuple
    split: int
    dt_in: int
    dt_out: int

    def __iter__(self):
        return iter((self.x, self.y, self.oos_x, self.oos_y))


def sample_window(panel: ReturnsPanel, rng, n_range, nu_range, dt_range, dt_out: int = 240,
                  split_range=None, oos_end_before=None, max_retries: int = 100) -> Window:
    """Random (in-sample, out-of-sample) window pair with a random X/Y asset split.

    ``split`` is the index of the first out-of-sample day. ``split_range`` bounds it
    (inclusive indices); ``oos_end_before`` is an index the OOS window must end before.
    """
    from .neural.training import split_dims

    g = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n_total = len(panel.assets)
    for _ in range(max_retries):
        n = int(g.integers(n_range[0], n_range[1] + 1))
        nu = float(g.uniform(*nu_range))
        dt_in = int(g.integers(dt_range[0], dt_range[1] + 1))
        lo = dt_in
        hi = panel.n_dates - dt_out
        if split_range is not None:
            lo, hi = max(lo, split_range[0]), min(hi, split_range[1])
        if oos_end_before is not None:
            hi = min(hi, oos_end_before - dt_out)
        if n < 2 or n > n_total or hi < lo:
            continue
        split = int(g.integers(lo, hi + 1))
        cols = g.choice(n_total, size=n, replace=False)
        n_x, _ = split_dims(n, nu)
        perm = g.permutation(cols)
        xc, yc = np.sort(perm[:n_x]), np.sort(perm[n_x:])
        ins = panel.returns[split - dt_in: split]
        oos = panel.returns[split: split + dt_out]
        assert split + dt_out <= panel.n_dates
        return Window(
            ins[:, xc], ins[:, yc], oos[:, xc], oos[:, yc],
            tuple(panel.assets[c] for c in xc), tuple(panel.assets[c] for c in yc),
            split, dt_in, dt_out,
        )
    raise PanelError(
        f"could not draw a window (dt_in in {dt_range}, dt_out={dt_out}, n in {n_range}) "
        f"from {panel.n_dates} dates x {n_total} assets after {max_retries} attempts"
    )


def time_permutation_shuffle(in_sample, oos, rng):
    """Pool the day-vectors of both segments, permute the days, split at the original lengths."""
    in_sample = np.asarray(in_sample, dtype=float)
    oos = np.asarray(oos, dtype=float)
    if in_sample.shape[1:] != oos.shape[1:]:
        raise HarnessError("segments must share the asset set")
    g = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    pool = np.concatenate([in_sample, oos], axis=0)
    pool = pool[g.permutation(pool.shape[0])]
    return pool[: in_sample.shape[0]], pool[in_sample.shape[0]:]


def remove_market_mode(returns) -> np.ndarray:
    """Subtract each day's cross-sectional mean return."""
    r = np.asarray(returns, dtype=float)
    return r - r.mean(axis=1, keepdims=True)


def prepare_window(w: Window, shuffle: bool, mode_removal: bool, rng) -> tuple:
    """Apply the optional controls and return ``(x, y, oos_x, oos_y)``."""
    n_x = w.x.shape[1]
    ins = np.hstack([w.x, w.y])
    oos = np.hstack([w.oos_x, w.oos_y])
    if shuffle:
        ins, oos = time_permutation_shuffle(ins, oos, rng)
    if mode_removal:
        ins, oos = remove_market_mode(ins), remove_market_mode(oos)
    return ins[:, :n_x], ins[:, n_x:], oos[:, :n_x], oos[:, n_x:]


def realized_target(oos_x, oos_y) -> np.ndarray:
    return sample_cross_correlation(oos_x, oos_y).cxy


def _periods(config: ExperimentConfig, panel: ReturnsPanel):
    if not config.periods:
        return [("all", 0, panel.n_dates - 1)]
    out = []
    for p in config.periods:
        start = panel.index_of(p["start"])
        end = panel.index_of(np.datetime64(p["end"], "D") + np.timedelta64(1, "D")) - 1
        out.append((str(p.get("label", p["start"])), start, end))
    return out


def run_real_eval(config: ExperimentConfig, panel: ReturnsPanel, models=None, threads: int | None = None) -> list[ResultRow]:
    """Walk-forward evaluation; ``models`` maps period label to a model (or is one model)."""
    estimators = list(config.estimators)
    n_range, nu_range, dt_range = config.window_ranges()
    rows = []
    for p_idx, (label, start, end) in enumerate(_periods(config, panel)):
        model = models.get(label) if isinstance(models, dict) else models
        if "nn" in estimators and model is not None:
            cutoff = model.config.get("train_end") if model.config else None
            if cutoff is not None and np.datetime64(cutoff, "D") > panel.dates[start]:
                raise HarnessError(f"model for period {label} was trained on data after the period start")

        def one(i: int, start=start, end=end, model=model, p_idx=p_idx) -> dict:
            stream = RngStream(config.master_seed, (p_idx << 32) + i)
            g = stream.generator()
            w = sample_window(panel, g, n_range, nu_range, dt_range, config.dt_out, split_range=(start, end))
            x, y, ox, oy = prepare_window(w, config.shuffle, config.mode_removal, stream.generator(2))
            return score_estimators(x, y, realized_target(ox, oy), estimators, config, stream.generator(1), model)

        t0 = time.perf_counter()
        per_draw = _map(one, range(config.n_sim), threads)
        elapsed = time.perf_counter() - t0
        n_lo, n_hi = n_range
        nu_lo, nu_hi = nu_range
        param = f"n={n_lo}" if n_lo == n_hi else f"n={n_lo}-{n_hi}"
        param += f";nu={nu_lo:g}" if nu_lo == nu_hi else f";nu={nu_lo:g}-{nu_hi:g}"
        rows += aggregate(per_draw, estimators, label, param, config, {e: elapsed for e in estimators}, p_idx << 8)
    return rows


class PanelSampler:
    """Training micro-batches drawn from a returns panel.

    Each micro-batch shares one ``(n, nu, dt_in)``; every sample's OOS window ends
    strictly before ``cutoff`` (an index into the panel), so nothing from the
    evaluation period leaks into training.
    """

    def __init__(self, panel: ReturnsPanel, train_config, cutoff: int | None = None, limit: int | None = None):
        self.panel = panel
        self.config = train_config
        self.cutoff = panel.n_dates if cutoff is None else cutoff
        self.limit = limit
        self.index = 0

    def __iter__(self):
        return self

    def __next__(self):
        from .neural.tokens import make_batch, tokens_from_triplet
        from .neural.training import draw_shape

        if self.limit is not None and self.index >= self.limit:
            raise StopIteration
        c = self.config
        g = RngStream(c.master_seed, self.index).generator()
        self.index += 1
        n_x, n_y, dt = draw_shape(g, c.n_range, c.nu_range, c.dt_range)
        n, nu = n_x + n_y, n_x / (n_x + n_y)
        samples = []
        for _ in range(c.batch_size):
            w = sample_window(self.panel, g, (n, n), (nu, nu), (dt, dt), c.dt_out, oos_end_before=self.cutoff)
            assert w.split + w.dt_out <= self.cutoff
            x, y, ox, oy = prepare_window(w, c.shuffle, c.mode_removal, g)
            tok, d = tokens_from_triplet(sample_cross_correlation(x, y))
            samples.append((tok, d, realized_target(ox, oy)))
        return make_batch(samples)
