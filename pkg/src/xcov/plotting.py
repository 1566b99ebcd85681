"""Figures written next to the CSV reports. Uses the non-interactive Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_results(rows, path, title: str | None = None, log_scale: bool = True):
    """Grouped bars of mean MSE per condition/param with bootstrap CI whiskers."""
    groups = []
    for r in rows:
        key = (r.condition, r.param)
        if key not in groups:
            groups.append(key)
    estimators = []
    for r in rows:
        if r.estimator not in estimators:
            estimators.append(r.estimator)
    lookup = {(r.condition, r.param, r.estimator): r for r in rows}

    fig, ax = plt.subplots(figsize=(max(5.0, 1.2 * len(groups) * len(estimators) / 2), 4))
    width = 0.8 / max(len(estimators), 1)
    xs = np.arange(len(groups))
    for j, name in enumerate(estimators):
        means, lo, hi = [], [], []
        for cond, param in groups:
            r = lookup.get((cond, param, name))
            m = r.mean_mse if r is not None else np.nan
            means.append(m)
            lo.append(m - r.ci_low if r is not None else 0.0)
            hi.append(r.ci_high - m if r is not None else 0.0)
        ax.bar(xs + (j - (len(estimators) - 1) / 2) * width, means, width, yerr=[lo, hi], capsize=2, label=name)
    ax.set_xticks(xs)
    ax.set_xticklabels([f"{c}\n{p}" for c, p in groups], fontsize=8)
    ax.set_ylabel("mean MSE")
    if log_scale:
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_canonical_histogram(canonical_s, path, bins: int = 40, title: str | None = None):
    s = np.asarray(canonical_s, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(s, bins=bins, color="0.4")
    ax.axvline(1.0, color="tab:red", ls="--", lw=1)
    ax.set_xlabel("canonical singular value")
    ax.set_ylabel("count")
    ax.set_title(title or f"max = {s.max():.4g}")
    _save(fig, path)


def plot_shrinkage_map(s_hat, cleaned: dict, path, title: str | None = None):
    """Cleaned versus empirical singular values, one series per estimator."""
    s_hat = np.asarray(s_hat, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    top = float(s_hat.max()) if s_hat.size else 1.0
    ax.plot([0, top], [0, top], color="0.7", lw=1, ls=":")
    for name, s in cleaned.items():
        ax.plot(s_hat, np.asarray(s, dtype=float), ".", ms=4, label=name)
    ax.set_xlabel("empirical singular value")
    ax.set_ylabel("cleaned singular value")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)
