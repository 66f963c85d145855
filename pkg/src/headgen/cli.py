"""``headgen`` command line.

Every verb writes its outputs into ``--out`` together with the effective
``config.json``. Outputs are staged in a sibling directory and moved into
place only when the command succeeds, so a failed run leaves nothing behind.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, override
from .data import AXES, TraceFormatError, TraceValidationError, WindowSet, load_trace_set, load_windows, save_windows
from .fft import baseline_windows, energy_fraction_below, estimate_mean_psd
from .metrics import compare_datasets
from .preprocess import (apply_transform, downsampling_error_cdf, downsampling_errors, fit_transform,
                         make_windows)
from .timegan import CheckpointError, TimeGan, Trainer, TrainingDiverged, generate, load_checkpoint, \
    save_checkpoint, select_snapshot

log = logging.getLogger("headgen")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad input files or arguments; maps to exit code 2."""


# -- output staging -------------------------------------------------------

@contextmanager
def staged_output(out: Path):
    """Yield a scratch directory whose contents replace entries of ``out`` on success."""
    out = out.resolve()
    stage = out.parent / f".{out.name}.partial-{os.getpid()}"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    out.mkdir(parents=True, exist_ok=True)
    for entry in sorted(stage.iterdir()):
        target = out / entry.name
        if target.is_dir():
            shutil.rmtree(target)
        elif target.exists():
            target.unlink()
        entry.replace(target)
    stage.rmdir()


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require_dir(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise InputError(f"{what} not found: {p}")
    return p


def _load_archive(path: str | Path, what: str) -> WindowSet:
    p = _require_dir(path, what)
    if (p / "windows" / "manifest.json").is_file():
        p = p / "windows"
    if not (p / "manifest.json").is_file():
        raise InputError(f"{what} is not a window archive: {p}")
    return load_windows(p)


def _traces(cfg: RunConfig):
    if not cfg.traces:
        raise InputError("no input traces given (use --traces or the 'traces' config key)")
    missing = [t for t in cfg.traces if not Path(t).is_file()]
    if missing:
        raise InputError(f"trace file not found: {missing[0]}")
    return load_trace_set(cfg.traces, cfg.rate_hz, provenance=f"{len(cfg.traces)} csv traces")


# -- verbs ----------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig, args, out: Path) -> None:
    ts = _traces(cfg)
    raw = make_windows(ts, cfg.preprocess)
    params = fit_transform(raw, cfg.quantile_count)
    scaled = apply_transform(raw, params)
    save_windows(raw, out / "raw_windows")
    save_windows(scaled, out / "windows", {"transformed": True})
    params.save(out / "transform.json")
    lengths = {t.subject_id: len(t) for t in ts}
    _write_json(out / "summary.json", {
        "traces": len(ts),
        "samples_per_trace": lengths,
        "samples_per_trace_decimated": {k: -(-n // cfg.preprocess.downsample_factor) for k, n in lengths.items()},
        "windows": raw.n_windows,
        "window_len": raw.window_len,
        "rate_hz": raw.rate_hz,
        "skipped_traces": raw.meta.get("skipped", []),
        "clamped_values": 0,
    })
    print(f"{len(ts)} traces -> {raw.n_windows} windows of {raw.window_len} steps")


def _data_dir(args) -> Path:
    if not args.data:
        raise InputError("--data (a preprocess output directory) is required")
    d = _require_dir(args.data, "preprocessed data directory")
    for name in ("windows", "transform.json"):
        if not (d / name).exists():
            raise InputError(f"{d} has no {name}; run 'headgen preprocess' first")
    return d


def cmd_train(cfg: RunConfig, args, out: Path) -> None:
    from .preprocess import TransformParams

    d = _data_dir(args)
    windows = load_windows(d / "windows")
    params = TransformParams.load(d / "transform.json")
    model = TimeGan(cfg.model, seed=cfg.seed)
    trainer = Trainer(model, windows, cfg.effective_schedule, params, out)
    try:
        trainer.run()
    except TrainingDiverged as e:
        if e.checkpoint is not None:
            keep = args.out_path / "diagnostic.ckpt"
            keep.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(e.checkpoint, keep)
            raise TrainingDiverged(f"{e} (diagnostic checkpoint: {keep})", keep) from None
        raise
    save_checkpoint(trainer, out / "checkpoint.ckpt")
    for phase, rows in trainer.losses.items():
        _write_csv(out / f"loss_{phase}.csv", [{"epoch": i + 1, **r} for i, r in enumerate(rows)])
    real = load_windows(d / "raw_windows") if (d / "raw_windows").is_dir() else None
    if real is not None and (out / "snapshots").is_dir():
        best, table = select_snapshot(out / "snapshots", real)
        _write_csv(out / "snapshot_scores.csv", table)
        _write_json(out / "best_snapshot.json", {"snapshot": best})
        print(f"trained; best snapshot {best} of {len(table)}")
    else:
        print("trained")


def cmd_generate(cfg: RunConfig, args, out: Path) -> None:
    if not args.checkpoint or not Path(args.checkpoint).is_file():
        raise InputError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    params = ckpt.transform
    if params is None:
        raise InputError(f"{args.checkpoint} carries no fitted transform")
    n = args.n if args.n is not None else cfg.schedule.snapshot_multiplier * int(ckpt.manifest["n_windows"])
    ws = generate(ckpt.build_model(), params, n, seed=cfg.seed, rate_hz=float(ckpt.manifest["rate_hz"]))
    save_windows(ws, out / "windows", {"checkpoint": Path(args.checkpoint).name})
    print(f"generated {n} windows ({ws.meta['clamped_values']} values clamped)")


def cmd_baseline(cfg: RunConfig, args, out: Path) -> None:
    ts = _traces(cfg)
    b = cfg.baseline
    model = estimate_mean_psd(ts, b.analysis_len)
    model.save(out / "psd_model.json")
    n_traces = b.n_traces or len(ts)
    out_len = b.out_len or min(len(t) for t in ts)
    ws = baseline_windows(model, cfg.preprocess, n_traces, cfg.seed, out_len)
    save_windows(ws, out / "windows")
    frac = energy_fraction_below(model, b.energy_cutoff_hz)
    _write_json(out / "energy.json", {"cutoff_hz": b.energy_cutoff_hz,
                                      "fraction_below": dict(zip(AXES, frac.tolist()))})
    print(f"baseline: {ws.n_windows} windows; energy <= {b.energy_cutoff_hz} Hz: "
          + ", ".join(f"{a} {f:.3f}" for a, f in zip(AXES, frac)))


def cmd_evaluate(cfg: RunConfig, args, out: Path) -> None:
    from .plots import render_report

    if not args.real or not args.synthetic:
        raise InputError("evaluate needs --real and at least one --synthetic archive")
    real = _load_archive(args.real, "real archive")
    labels = args.label or []
    if labels and len(labels) != len(args.synthetic):
        raise InputError("give one --label per --synthetic archive")
    labels = labels or [Path(p).name or f"synthetic{i}" for i, p in enumerate(args.synthetic)]
    if len(set(labels)) != len(labels):
        raise InputError(f"duplicate dataset labels: {labels}")
    m = cfg.metrics
    reports = {}
    for label, path in zip(labels, args.synthetic):
        synth = _load_archive(path, "synthetic archive")
        try:
            reports[label] = compare_datasets(real, synth, m.bucket_width, m.max_lag, m.pca_samples, cfg.seed,
                                              m.absolute_velocity)
        except ValueError as e:
            raise InputError(f"{path}: {e}") from None
    _write_json(out / "report.json", {"real": str(args.real),
                                      "synthetic": {k: r.to_dict() for k, r in reports.items()}})
    _write_csv(out / "scalars.csv", [{"dataset": k, "metric": name, "value": v}
                                     for k, r in reports.items() for name, v in r.scalars.items()])
    _write_report_csvs(reports, out)
    render_report(reports, out / "plots")
    for k, r in reports.items():
        worst = max((v, n) for n, v in r.scalars.items() if n.startswith("orientation_l1"))
        print(f"{k}: worst orientation L1 {worst[0]:.3f} ({worst[1]})")


def _write_report_csvs(reports, out: Path) -> None:
    hist_rows, corr_rows, pca_rows = [], [], []
    first = True
    for label, r in reports.items():
        for kind, table in (("orientation", r.orientation), ("range", r.ranges)):
            for axis, pair in table.items():
                for who, h in zip(("real", label), pair):
                    if who == "real" and not first:
                        continue
                    hist_rows += [{"dataset": who, "kind": kind, "axis": axis, "bucket_left": lo, "mass": p}
                                  for lo, p in zip(h.lefts, h.masses)]
        for kind, table in (("autocorrelation", r.autocorrelation), ("crosscorrelation", r.crosscorrelation)):
            for key, pair in table.items():
                for who, c in zip(("real", label), pair):
                    if who == "real" and not first:
                        continue
                    corr_rows += [{"dataset": who, "kind": kind, "series": key, "lag": int(lag), "value": v}
                                  for lag, v in zip(c.lags, c.values)]
        if r.pca is not None:
            pca_rows += [{"comparison": label, "label": "real" if who == "real" else label, "pc1": x, "pc2": y}
                         for who, x, y in r.pca.to_rows()]
        first = False
    _write_csv(out / "histograms.csv", hist_rows)
    _write_csv(out / "correlations.csv", corr_rows)
    _write_csv(out / "pca.csv", pca_rows)


def cmd_select_snapshot(cfg: RunConfig, args, out: Path) -> None:
    run = _require_dir(args.run or "", "training run directory")
    real = _load_archive(args.real, "real archive") if args.real else None
    if real is None:
        raise InputError("select-snapshot needs --real (the raw_windows archive)")
    try:
        best, table = select_snapshot(run, real)
    except (ValueError, FileNotFoundError) as e:
        raise InputError(str(e)) from None
    _write_csv(out / "snapshot_scores.csv", table)
    _write_json(out / "best_snapshot.json", {"snapshot": best})
    print(best)


def cmd_downsample_analysis(cfg: RunConfig, args, out: Path) -> None:
    from .plots import render_error_cdf

    ts = _traces(cfg)
    factors = args.factors or [5, 10, 15, 25, 50]
    rows = []
    errors: dict[int, list[np.ndarray]] = {f: [] for f in factors}
    for t in ts:
        rows += [{"trace": t.subject_id, **r} for r in downsampling_error_cdf(t, factors)]
        for f in factors:
            errors[f].append(downsampling_errors(t, f).ravel())
    _write_csv(out / "downsampling_errors.csv", rows)
    render_error_cdf({f: np.concatenate(e) for f, e in errors.items()}, out / "downsampling_cdf.svg")
    print(f"analysed {len(ts)} traces at factors {factors}")


VERBS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "generate": cmd_generate,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "select-snapshot": cmd_select_snapshot,
    "downsample-analysis": cmd_downsample_analysis,
}


# -- argument handling ----------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", help="JSON run configuration", **kw)
    p.add_argument("--seed", type=int, help="global seed (overrides the config)", **kw)
    p.add_argument("--out", help="output directory (overrides the config)", **kw)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="headgen", description="Synthetic head-rotation data pipeline.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    def verb(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    def trace_flags(p):
        p.add_argument("--traces", nargs="+", help="trace CSV files")
        p.add_argument("--rate-hz", type=float, dest="rate_hz")

    def window_flags(p):
        p.add_argument("--downsample-factor", type=int)
        p.add_argument("--window-len", type=int)
        p.add_argument("--window-stride", type=int)

    p = verb("preprocess", "window and transform traces")
    trace_flags(p)
    window_flags(p)
    p.add_argument("--quantiles", type=int, dest="quantile_count")

    p = verb("train", "train the generator and emit snapshots")
    p.add_argument("--data", help="preprocess output directory")
    for phase in ("embedding", "supervised", "joint"):
        p.add_argument(f"--epochs-{phase}", type=int, dest=f"epochs_{phase}")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--snapshot-every", type=int)

    p = verb("generate", "draw windows from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", type=int, default=None, help="window count (default: 10x the training set)")

    p = verb("baseline", "spectral random-phase baseline")
    trace_flags(p)
    window_flags(p)
    p.add_argument("--n-traces", type=int)
    p.add_argument("--out-len", type=int)
    p.add_argument("--analysis-len", type=int)

    p = verb("evaluate", "compare synthetic archives against real data")
    p.add_argument("--real", required=True)
    p.add_argument("--synthetic", nargs="+", required=True)
    p.add_argument("--label", nargs="+")
    p.add_argument("--bucket-width", type=float)
    p.add_argument("--max-lag", type=int)

    p = verb("select-snapshot", "rank the snapshots of a training run")
    p.add_argument("--run", required=True, help="train output directory")
    p.add_argument("--real", required=True, help="raw (degree) windows of the training data")

    p = verb("downsample-analysis", "decimation plus spline reconstruction error")
    trace_flags(p)
    p.add_argument("--factors", nargs="+", type=int)
    return parser


_OVERRIDES = {
    "traces": "traces", "rate_hz": "rate_hz", "quantile_count": "quantile_count",
    "downsample_factor": "preprocess.downsample_factor", "window_len": "preprocess.window_len",
    "window_stride": "preprocess.window_stride",
    "epochs_embedding": "schedule.epochs_embedding", "epochs_supervised": "schedule.epochs_supervised",
    "epochs_joint": "schedule.epochs_joint", "batch_size": "schedule.batch_size",
    "snapshot_every": "schedule.snapshot_every",
    "n_traces": "baseline.n_traces", "out_len": "baseline.out_len", "analysis_len": "baseline.analysis_len",
    "bucket_width": "metrics.bucket_width", "max_lag": "metrics.max_lag",
    "seed": "seed", "out": "out",
}


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    updates = {key: getattr(args, attr, None) for attr, key in _OVERRIDES.items()}
    if updates.get("traces") is not None:
        updates["traces"] = list(updates["traces"])
    return override(cfg, updates)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        cfg = resolve_config(args)
        args.out_path = Path(cfg.out)
        with staged_output(args.out_path) as stage:
            VERBS[args.verb](cfg, args, stage)
            cfg.save(stage / "config.json")
        return EXIT_OK
    except (InputError, ConfigError, TraceFormatError, TraceValidationError, CheckpointError,
            FileNotFoundError) as e:
        print(f"headgen {args.verb}: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDiverged as e:
        print(f"headgen {args.verb}: training diverged: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as e:
        print(f"headgen {args.verb}: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # noqa: BLE001 - last-resort handler for the exit-code contract
        log.debug("internal error", exc_info=True)
        print(f"headgen {args.verb}: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
