"""Command-line entry point: ``epipinn <command> ...``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import subprocess
import sys
from dataclasses import replace
from datetime import date, datetime, timezone
from pathlib import Path

from . import __version__
from .backtest import (BacktestConfig, build_config, config_summary, load_config,
                       rolling_backtest, score_backtest, study_table, window_length_study)
from .data import (CHANNELS, load_raw_dir, preprocess, read_dataset, write_dataset)
from .errors import EpiPinnError, SchemaMismatch
from .quantiles import DEFAULT_ANCHOR, HUB_LEVELS, from_hub_csv, to_hub_csv
from .scoring import build_report
from .synthetic import synthetic_dataset

log = logging.getLogger("epipinn")
OUT_DIR_ENV = "EPIPINN_OUT_DIR"


# helpers -----------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta_path(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".meta.json")


def _anchor(dataset_path) -> date:
    meta = _meta_path(dataset_path)
    if meta.exists():
        return date.fromisoformat(json.loads(meta.read_text())["week1_end"])
    return DEFAULT_ANCHOR


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _build_id() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, command: str, config: dict, outputs: list, dataset=None,
                   warnings: list = ()) -> Path:
    """Record what produced ``outputs`` (the only file carrying timestamps)."""
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
    manifest = {
        "command": command,
        "config_digest": digest,
        "config": config,
        "seed_policy": config.get("seed_policy"),
        "dataset_span": None if dataset is None else [dataset.first_week, dataset.last_week],
        "build": _build_id(),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
        "warnings": list(warnings),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _config_from_args(args) -> BacktestConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else BacktestConfig()
    flags = {}
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("w_ode", "w_ode"),
                      ("l2", "l2_coefficient"), ("workers", "workers"),
                      ("window_length", "window_length"), ("origin_first", "origin_first"),
                      ("origin_last", "origin_last")):
        value = getattr(args, flag, None)
        if value is not None:
            flags[key] = value
    if getattr(args, "ablation", "none") == "nn":
        flags["w_ode"] = 0.0
    return build_config(flags, cfg)


# commands ----------------------------------------------------------------

def cmd_preprocess(args) -> int:
    raw = load_raw_dir(args.raw_dir)
    ds, spec, summary = preprocess(raw, hosp_trim=args.hosp_trim, cutoff=args.cutoff)
    out = Path(args.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    side = write_dataset(out, ds, spec)
    week1_end = date.fromisoformat(summary.start).toordinal() + 12
    meta = {"start": summary.start, "end": summary.end,
            "week1_end": date.fromordinal(week1_end).isoformat()}
    _meta_path(out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"weeks retained: {summary.weeks_retained} (truncated {summary.truncated_weeks} "
          f"after week {args.cutoff})")
    print(f"channels: {', '.join(CHANNELS)}")
    print(f"hospitalizations start at week {summary.hosp_first_week} "
          f"(first {args.hosp_trim} weeks trimmed)")
    print(f"wrote {out} and {side}")
    return 0


def cmd_synth(args) -> int:
    ds = synthetic_dataset(n_weeks=args.weeks, noise=args.noise, seed=args.seed)
    out = Path(args.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, ds, ds.scaling)
    print(f"wrote {out} ({ds.n_weeks} weeks)")
    return 0


def cmd_backtest(args) -> int:
    dataset = read_dataset(args.dataset)
    config = _config_from_args(args)
    if args.origin_last is None and config.origins[1] > dataset.last_week - 1:
        hi = dataset.last_week - max(config.horizons)
        config = replace(config, origins=(min(config.origins[0], hi), hi))
        log.warning("origins clipped to %s to fit the dataset", config.origins)
    method = "nn" if config.fit.weights.w_ode == 0 else "pinn"
    out = _out_dir(args)
    result = rolling_backtest(dataset, config)
    report, quantiles = score_backtest(dataset, {method: result.forecasts}, config.horizons)
    anchor = _anchor(args.dataset)
    paths = [out / "forecasts.csv", out / f"quantiles_{method}.csv",
             out / "quantiles_naive.csv", out / "report.csv"]
    paths[0].write_text(result.to_csv())
    paths[1].write_text(to_hub_csv(quantiles[method], anchor))
    paths[2].write_text(to_hub_csv(quantiles["naive"], anchor))
    paths[3].write_text(report.to_csv())
    warnings = [f"origin {w.origin}: {w.error}" for w in result.failed]
    summary = config_summary(config)
    summary["anchor"] = anchor.isoformat()
    write_manifest(out, "backtest", summary, paths, dataset, warnings)
    print(report.to_table())
    if warnings:
        print(f"warning: {len(warnings)} window(s) failed and were skipped", file=sys.stderr)
    return 0


def cmd_window_study(args) -> int:
    dataset = read_dataset(args.dataset)
    config = _config_from_args(args)
    study = window_length_study(dataset, config, tuple(args.lengths),
                                (args.eval_first, args.eval_last))
    out = _out_dir(args)
    path = out / "window_study.csv"
    lines = ["window_length,target,horizon,mase,wis"]
    lines += [f"{l},{t},{h},{m!r},{w!r}" for l, t, h, m, w in study_table(study)]
    path.write_text("\n".join(lines) + "\n")
    write_manifest(out, "window-study", config_summary(config), [path], dataset)
    print(path.read_text(), end="")
    return 0


def cmd_score(args) -> int:
    dataset = read_dataset(args.truth)
    anchor = _anchor(args.truth)
    results = {}
    for f in args.forecasts:
        results[Path(f).stem.removeprefix("quantiles_")] = from_hub_csv(Path(f).read_text(), anchor)
    if "naive" not in results:
        raise SchemaMismatch("scoring needs a naive forecast file (quantiles_naive.csv)")
    ordered = {m: v for m, v in results.items() if m != "naive"}
    ordered["naive"] = results["naive"]
    report = build_report(ordered, lambda t, w: dataset.value(t, w))
    out = _out_dir(args)
    path = out / "score_report.csv"
    path.write_text(report.to_csv())
    write_manifest(out, "score", {"forecasts": [str(f) for f in args.forecasts],
                                  "truth": str(args.truth)}, [path], dataset)
    print(report.to_table())
    return 0


def cmd_export_plots(args) -> int:
    out = _out_dir(args)
    report = list(csv.DictReader(io.StringIO(Path(args.report).read_text())))
    truth = read_dataset(args.truth) if args.truth else None
    anchor = _anchor(args.truth) if args.truth else DEFAULT_ANCHOR
    forecasts = {}
    for f in args.forecasts:
        forecasts[Path(f).stem.removeprefix("quantiles_")] = from_hub_csv(Path(f).read_text(), anchor)

    point_rows = ["method,target,horizon,origin_week,target_week,point,truth"]
    q_header = "method,target,horizon,origin_week,target_week," + ",".join(f"q{lv:.3f}" for lv in HUB_LEVELS)
    q_rows = [q_header]
    series = []
    for cell in report:
        method, target, h = cell["method"], cell["target"], int(cell["horizon"])
        pts = sorted((q for q in forecasts.get(method, []) if q.target == target and q.horizon == h),
                     key=lambda q: q.origin_week)
        entry = {"method": method, "target": target, "horizon": h,
                 "mase": float(cell["mase"]), "wis": float(cell["wis"]), "points": []}
        for q in pts:
            y = truth.value(target, q.target_week) if truth is not None else float("nan")
            point_rows.append(f"{method},{target},{h},{q.origin_week},{q.target_week},{q.point!r},"
                              f"{'' if y != y else repr(y)}")
            q_rows.append(f"{method},{target},{h},{q.origin_week},{q.target_week}," +
                          ",".join(repr(q.quantile(lv)) for lv in HUB_LEVELS))
            entry["points"].append({"target_week": q.target_week, "point": q.point,
                                    "truth": None if y != y else y})
        series.append(entry)
    paths = [out / "plot_points.csv", out / "plot_quantiles.csv", out / "plot_series.json"]
    paths[0].write_text("\n".join(point_rows) + "\n")
    paths[1].write_text("\n".join(q_rows) + "\n")
    paths[2].write_text(json.dumps(series, indent=1, sort_keys=True) + "\n")
    write_manifest(out, "export-plots", {"report": str(args.report)}, paths)
    print(f"wrote {len(series)} plot series to {out}")
    return 0


def cmd_fetch(args) -> int:
    from .adapters import convert_all, fetch

    upstream = fetch(Path(args.out_dir or "raw") / "upstream")
    written = convert_all(upstream, args.out_dir or "raw", args.state)
    for name, path in written.items():
        print(f"{name}: {path}")
    return 0


# parser ------------------------------------------------------------------

def _add_run_flags(p):
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--w-ode", dest="w_ode", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--window-length", dest="window_length", type=int)
    p.add_argument("--ablation", choices=("none", "nn"), default="none")
    p.add_argument("--workers", type=int)
    p.add_argument("--origin-first", dest="origin_first", type=int)
    p.add_argument("--origin-last", dest="origin_last", type=int)
    p.add_argument("--out-dir", dest="out_dir", help=f"output directory (default ${OUT_DIR_ENV} or ./out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epipinn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="raw daily CSVs -> weekly dataset")
    p.add_argument("raw_dir")
    p.add_argument("out_path")
    p.add_argument("--hosp-trim", dest="hosp_trim", type=int, default=20)
    p.add_argument("--cutoff", type=int, default=110)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="write a synthetic two-wave dataset")
    p.add_argument("out_path")
    p.add_argument("--weeks", type=int, default=60)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("backtest", help="rolling-origin backtest, quantiles and scores")
    p.add_argument("dataset")
    _add_run_flags(p)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("window-study", help="trailing training-window length study")
    p.add_argument("dataset")
    p.add_argument("--lengths", type=int, nargs="+", default=[4, 8, 12, 16, 20, 24])
    p.add_argument("--eval-first", dest="eval_first", type=int, default=48)
    p.add_argument("--eval-last", dest="eval_last", type=int, default=110)
    _add_run_flags(p)
    p.set_defaults(func=cmd_window_study)

    p = sub.add_parser("score", help="score Hub-format forecast files")
    p.add_argument("forecasts", nargs="+")
    p.add_argument("--truth", required=True, help="dataset CSV holding the observations")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-plots", help="long-format tables for plotting")
    p.add_argument("--report", required=True)
    p.add_argument("--forecasts", nargs="+", required=True)
    p.add_argument("--truth")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_export_plots)

    p = sub.add_parser("fetch", help="download and convert upstream data (best effort)")
    p.add_argument("--state", default="California")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EpiPinnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
