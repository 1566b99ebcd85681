"""Command-line front end: ``xcov <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure with partial output, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import EstimatorError, bbp_clean, cv_clean, decompose, rescale_to_covariance, sample_cross_correlation
from .feasibility import DEFAULT_TOL, FeasibilityError, feasibility_report
from .harness import (
    ExperimentConfig,
    HarnessError,
    PanelError,
    PanelSampler,
    read_panel_csv,
    run_real_eval,
    run_synthetic_benchmark,
    write_results_csv,
)
from .linalg import LinalgError
from .synthgen import BenchmarkError, parse_param

log = logging.getLogger("xcov")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- matrix I/O


def write_matrix_csv(a, path) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in a:
            w.writerow([format(float(v), ".17g") for v in row])


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise UsageError(f"{path}:{lineno}: non-numeric cell") from None
            if len(rows[-1]) != len(rows[0]):
                raise UsageError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows:
        raise UsageError(f"{path}: empty matrix")
    return np.array(rows)


def _panel(path):
    try:
        return read_panel_csv(path)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    except PanelError as exc:
        raise UsageError(str(exc)) from None


def _json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _load_model(path):
    from .neural import ModelFormatError, load_model

    try:
        return load_model(path)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    except ModelFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _on_off(value: str) -> bool:
    v = value.lower()
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _exit_for(rows) -> int:
    return EXIT_PARTIAL if any(r.failures for r in rows) else EXIT_OK


# ---------------------------------------------------------------- subcommands


def cmd_synth_bench(args) -> int:
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    try:
        param = parse_param(args.benchmark, args.param)
        config = ExperimentConfig(
            benchmark=args.benchmark.replace("-", "_"),
            param=param,
            estimators=estimators,
            n_sim=args.nsim,
            n_x=args.nx,
            n_y=args.ny,
            dt_in=args.dt,
            master_seed=args.seed,
            folds=args.folds,
            bootstrap_copies=args.bootstrap,
        )
    except (BenchmarkError, HarnessError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    model = _load_model(args.model) if args.model else None
    if "nn" in estimators and model is None:
        raise UsageError("estimator 'nn' requires --model")
    rows = run_synthetic_benchmark(config, threads=args.threads, model=model)
    write_results_csv(rows, args.out, include_timing=args.timing)
    if args.figure:
        from .plotting import plot_results

        plot_results(rows, args.figure, title=f"{config.benchmark} {param}")
    return _exit_for(rows)


def cmd_clean(args) -> int:
    if (args.method == "nn") != (args.model is not None):
        raise UsageError("--model is required for --method nn and only valid with it")
    px, py = _panel(args.x), _panel(args.y)
    if px.n_dates != py.n_dates or np.any(px.dates != py.dates):
        n = min(px.n_dates, py.n_dates)
        bad = np.nonzero(px.dates[:n] != py.dates[:n])[0]
        i = int(bad[0]) if bad.size else n
        first = px.dates[i] if i < px.n_dates else py.dates[i]
        raise UsageError(f"X and Y panels are misaligned; first mismatching date {first} (row {i + 2})")
    t = sample_cross_correlation(px.returns, py.returns, px.assets, py.assets)
    d = decompose(t)
    if args.method == "bbp":
        res = bbp_clean(t, apply_isotonic=args.isotonic, d=d)
    elif args.method == "cv":
        res = cv_clean(px.returns, py.returns, folds=args.folds, apply_isotonic=args.isotonic,
                       rng=np.random.default_rng(args.seed), t=t, d=d)
    else:
        res = _load_model(args.model).clean(t, d)
    out = rescale_to_covariance(res.cleaned, t.std_x, t.std_y) if args.covariance else res.cleaned
    write_matrix_csv(out, args.out)
    sidecar = {
        "method": args.method,
        "covariance": args.covariance,
        "x_assets": list(px.assets),
        "y_assets": list(py.assets),
        "s_hat": [float(v) for v in d.s],
        "s_clean": [float(v) for v in res.s_clean],
    }
    Path(args.out).with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    if args.figure:
        from .plotting import plot_shrinkage_map

        plot_shrinkage_map(d.s, {args.method: res.s_clean}, args.figure)
    return EXIT_OK


def cmd_train(args) -> int:
    from .neural import NeuralModel, SyntheticSampler, TrainConfig, save_model, train

    try:
        config = TrainConfig.from_dict(_json(args.config))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    if args.panel:
        panel = _panel(args.panel)
        cutoff = panel.index_of(config.train_end) if config.train_end else None
        sampler = PanelSampler(panel, config, cutoff=cutoff)
    else:
        sampler = SyntheticSampler(config)
    model = NeuralModel.initial(config.arch(), config.init_seed)

    def progress(epoch, step, value, lr):
        if step == config.steps_per_epoch - 1:
            log.info("epoch %d loss %.6g lr %.3g", epoch, value, lr)

    try:
        trained = train(config, sampler, model, callback=progress)
    except (HarnessError, EstimatorError, LinalgError) as exc:
        log.error("training failed: %s", exc)
        return EXIT_PARTIAL
    save_model(trained, args.out)
    print(f"wrote {args.out} ({trained.parameter_count} parameters)")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        config = ExperimentConfig.from_dict(_json(args.config))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    if args.dt_out is not None and args.dt_out != config.dt_out:
        raise UsageError(f"--dt-out {args.dt_out} does not match config dt_out {config.dt_out}")
    panel = _panel(args.panel)
    models = None
    if args.model:
        model = _load_model(args.model)
        trained_dt_out = model.config.get("dt_out") if model.config else None
        if trained_dt_out is not None and trained_dt_out != config.dt_out:
            raise UsageError(f"model was trained with dt_out {trained_dt_out}, config has {config.dt_out}")
        models = model
    if "nn" in config.estimators and models is None:
        raise UsageError("estimator 'nn' requires --model")
    try:
        rows = run_real_eval(config, panel, models, threads=args.threads)
    except HarnessError as exc:
        raise UsageError(str(exc)) from None
    write_results_csv(rows, args.out, include_timing=args.timing)
    if args.figure:
        from .plotting import plot_results

        plot_results(rows, args.figure)
    return _exit_for(rows)


def cmd_feasibility(args) -> int:
    cxx, cyy, cxy = read_matrix_csv(args.cxx), read_matrix_csv(args.cyy), read_matrix_csv(args.cxy)
    try:
        rep = feasibility_report(cxx, cyy, cxy, tol=args.tol)
    except (FeasibilityError, LinalgError) as exc:
        raise UsageError(str(exc)) from None
    print(f"max_canonical {rep.max_canonical:.10g}")
    print(f"fraction_in_unit_interval {rep.fraction_in_unit_interval:.6g}")
    print(f"feasible_psd {str(rep.feasible_psd).lower()}")
    print(f"feasible_pd {str(rep.feasible_pd).lower()}")
    print(f"block_min_eigenvalue {rep.block_min_eigenvalue:.10g}")
    if args.figure:
        from .plotting import plot_canonical_histogram

        plot_canonical_histogram(rep.canonical_s, args.figure)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xcov", description="Rotationally invariant cross-covariance cleaning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth-bench", help="Monte Carlo benchmark on a synthetic model",
                       description="Average MSE of each estimator over simulated draws, with bootstrap CIs.")
    s.add_argument("--benchmark", required=True, choices=["finite-rank", "heavy-bulk", "white-heavy", "mode"],
                   help="population model family")
    s.add_argument("--param", required=True,
                   help="spike fraction xi for finite-rank, tail index alpha or 'gaussian' for the heavy families, "
                        "mode strength m for mode")
    s.add_argument("--nx", type=_positive_int, default=200, help="number of X variables (default 200)")
    s.add_argument("--ny", type=_positive_int, default=350, help="number of Y variables (default 350)")
    s.add_argument("--dt", type=int, default=500, help="in-sample length (default 500)")
    s.add_argument("--nsim", type=_positive_int, default=100, help="number of simulations, >= 1 (default 100)")
    s.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    s.add_argument("--estimators", default="mle,bbp,cv,oracle",
                   help="comma-separated subset of mle,bbp,cv,nn,oracle (default mle,bbp,cv,oracle)")
    s.add_argument("--model", help="trained model file, required when nn is among the estimators")
    s.add_argument("--folds", type=int, default=10, help="cross-validation folds (default 10)")
    s.add_argument("--bootstrap", type=_positive_int, default=10_000, help="bootstrap resamples (default 10000)")
    s.add_argument("--threads", type=_positive_int, help="worker threads (default: XCOV_THREADS or CPU count)")
    s.add_argument("--timing", action="store_true", help="fill the seconds column (output no longer reproducible)")
    s.add_argument("--figure", help="also write a bar chart of the results to this image path")
    s.add_argument("--out", required=True, help="results CSV path")
    s.set_defaults(func=cmd_synth_bench)

    c = sub.add_parser("clean", help="clean the cross-correlation of two return panels",
                       description="Write the cleaned cross-correlation (or covariance) block as a headerless CSV "
                                   "plus a sidecar JSON holding the singular values.")
    c.add_argument("--x", required=True, help="X returns panel CSV (date column first)")
    c.add_argument("--y", required=True, help="Y returns panel CSV on the same dates")
    c.add_argument("--method", required=True, choices=["bbp", "cv", "nn"], help="cleaning method")
    c.add_argument("--model", help="model file, required iff --method nn")
    c.add_argument("--folds", type=int, default=10, help="cross-validation folds (default 10)")
    c.add_argument("--isotonic", type=_on_off, default=None,
                   help="on|off: monotone post-processing (default on for cv, off for bbp)")
    c.add_argument("--covariance", type=_on_off, default=False,
                   help="on|off: rescale by the marginal sample standard deviations (default off)")
    c.add_argument("--seed", type=int, default=0, help="fold-shuffling seed for cv (default 0)")
    c.add_argument("--figure", help="also write a shrinkage-map plot to this image path")
    c.add_argument("--out", required=True, help="matrix CSV path; the sidecar JSON goes next to it")
    c.set_defaults(func=cmd_clean)

    t = sub.add_parser("train", help="train the neural cleaner",
                       description="Train on windows of a returns panel, or on synthetic draws when --panel is omitted.")
    t.add_argument("--panel", help="returns panel CSV; omit for synthetic training")
    t.add_argument("--config", required=True, help="training config JSON (TrainConfig field names)")
    t.add_argument("--out", required=True, help="model file path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="walk-forward evaluation on a returns panel",
                       description="Score estimators against realized out-of-sample cross-correlations.")
    e.add_argument("--panel", required=True, help="returns panel CSV")
    e.add_argument("--model", help="model file for the nn estimator")
    e.add_argument("--config", required=True, help="experiment config JSON (ExperimentConfig field names)")
    e.add_argument("--dt-out", type=int, help="expected out-of-sample length; must match the config")
    e.add_argument("--threads", type=_positive_int, help="worker threads (default: XCOV_THREADS or CPU count)")
    e.add_argument("--timing", action="store_true", help="fill the seconds column")
    e.add_argument("--figure", help="also write a bar chart of the results to this image path")
    e.add_argument("--out", required=True, help="results CSV path")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("feasibility", help="check a block against its marginals",
                       description="Canonical singular values of the whitened cross block and PSD/PD verdicts.")
    f.add_argument("--cxx", required=True, help="X marginal matrix CSV (headerless)")
    f.add_argument("--cyy", required=True, help="Y marginal matrix CSV (headerless)")
    f.add_argument("--cxy", required=True, help="cross block matrix CSV (headerless)")
    f.add_argument("--tol", type=float, default=DEFAULT_TOL, help=f"verdict tolerance (default {DEFAULT_TOL:g})")
    f.add_argument("--figure", help="also write a histogram of canonical values to this image path")
    f.set_defaults(func=cmd_feasibility)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "isotonic", "absent") is None:
        args.isotonic = args.method == "cv"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"xcov {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
