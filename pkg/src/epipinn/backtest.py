"""Rolling-origin backtests: one independently trained model per forecast origin."""

from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import TARGETS, Dataset
from .errors import DivergedLoss, EmptyWindow
from .pinn import FitConfig, PointForecast, TrainingWindow, predict_point, train
from .quantiles import causal_quantiles
from .scoring import ScoreReport, build_report, naive_forecast

log = logging.getLogger(__name__)

DEFAULT_ORIGINS = (17, 89)
WINDOW_LENGTHS = (4, 8, 12, 16, 20, 24)


@dataclass(frozen=True)
class BacktestConfig:
    fit: FitConfig = FitConfig()
    origins: tuple = DEFAULT_ORIGINS        # inclusive range of origin weeks
    horizons: tuple = (1, 2, 3, 4)
    window_length: int | None = None        # trailing weeks; None trains on all history
    workers: int = 1
    seed: int = 0
    seed_policy: str = "per-origin"         # per-origin: seed + origin; fixed: seed
    retry_seed_offset: int = 100_003

    def window_seed(self, origin: int) -> int:
        if self.seed_policy == "fixed":
            return self.seed
        if self.seed_policy == "per-origin":
            return self.seed + origin
        raise ValueError(f"unknown seed policy {self.seed_policy!r}")

    def window_for(self, dataset: Dataset, origin: int) -> TrainingWindow:
        first = dataset.first_week
        if self.window_length is not None:
            first = max(first, origin - self.window_length + 1)
        return TrainingWindow(first, origin, tuple(self.horizons))


@dataclass
class WindowResult:
    origin: int
    seed: int
    converged: bool
    forecasts: list = field(default_factory=list)
    final_loss: float = math.nan
    error: str | None = None


@dataclass
class BacktestResult:
    windows: list

    @property
    def forecasts(self) -> list[PointForecast]:
        return [f for w in self.windows for f in w.forecasts]

    @property
    def failed(self) -> list:
        return [w for w in self.windows if not w.converged]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("origin_week,target,horizon,value,seed,converged\n")
        for w in self.windows:
            for f in w.forecasts:
                buf.write(f"{f.origin_week},{f.target},{f.horizon},{f.value!r},{w.seed},"
                          f"{str(w.converged).lower()}\n")
        return buf.getvalue()


def run_window(dataset: Dataset, origin: int, config: BacktestConfig) -> WindowResult:
    """Train on the window ending at ``origin`` and forecast the horizons.

    A diverged run is retried once with a fresh seed; a second failure is
    recorded, not raised.
    """
    window = config.window_for(dataset, origin)
    seed = config.window_seed(origin)
    err = None
    for attempt in range(2):
        try:
            model, history = train(dataset, window, config.fit, seed=seed)
        except DivergedLoss as exc:
            log.warning("origin %d seed %d diverged: %s", origin, seed, exc)
            err = str(exc)
            seed += config.retry_seed_offset
            continue
        return WindowResult(origin, seed, True,
                            predict_point(model, origin, tuple(config.horizons)),
                            float(history[-1]))
    return WindowResult(origin, seed - config.retry_seed_offset, False, error=err)


def _run_window_job(args):
    return run_window(*args)


def origin_range(config: BacktestConfig) -> list[int]:
    lo, hi = config.origins
    return list(range(lo, hi + 1))


def rolling_backtest(dataset: Dataset, config: BacktestConfig | None = None) -> BacktestResult:
    """Independent fits for every origin in ``config.origins``.

    Windows run in a process pool when ``config.workers > 1``; results are
    ordered by origin either way, so output does not depend on scheduling.
    """
    config = BacktestConfig() if config is None else config
    origins = origin_range(config)
    for o in origins:
        if o > dataset.last_week or o < dataset.first_week:
            raise EmptyWindow(f"origin {o} outside dataset weeks "
                              f"{dataset.first_week}..{dataset.last_week}")
    jobs = [(dataset, o, config) for o in origins]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            windows = list(pool.map(_run_window_job, jobs))
    else:
        windows = [run_window(*job) for job in jobs]
    windows.sort(key=lambda w: w.origin)
    return BacktestResult(windows)


def naive_point_forecasts(dataset: Dataset, origins, horizons=(1, 2, 3, 4)) -> list[PointForecast]:
    out = []
    for target in TARGETS:
        series = dataset.series(target)
        for o in origins:
            for h in horizons:
                try:
                    v = naive_forecast(series, o, h)
                except Exception:
                    continue
                out.append(PointForecast(target, h, o, v))
    return out


def truth_lookup(dataset: Dataset):
    def truth(target: str, week: int) -> float:
        return dataset.value(target, week)
    return truth


def score_backtest(dataset: Dataset, results: dict, horizons=(1, 2, 3, 4),
                   eval_weeks: tuple | None = None) -> tuple[ScoreReport, dict]:
    """Quantile forecasts for each method plus the naive baseline, then a report.

    ``results`` maps method name to point forecasts. Returns the report and
    the quantile forecasts by method (naive included). ``eval_weeks``
    restricts scoring to target weeks in the inclusive range.
    """
    truth = truth_lookup(dataset)
    origins = sorted({f.origin_week for pts in results.values() for f in pts})
    quantiles = {"naive": causal_quantiles(naive_point_forecasts(dataset, origins, horizons), truth)}
    for method, pts in results.items():
        quantiles[method] = causal_quantiles(pts, truth)

    def scored_truth(target, week):
        if eval_weeks is not None and not eval_weeks[0] <= week <= eval_weeks[1]:
            return math.nan
        return truth(target, week)

    ordered = {m: quantiles[m] for m in list(results) + ["naive"]}
    return build_report(ordered, scored_truth, horizons=tuple(horizons)), quantiles


def window_length_study(dataset: Dataset, config: BacktestConfig | None = None,
                        lengths=WINDOW_LENGTHS, eval_weeks=(48, 110)) -> dict:
    """MASE/WIS per trailing training length, scored over ``eval_weeks``.

    Origins run from ``eval_weeks[0] - max(horizons)`` to ``eval_weeks[1] - 1``
    (clipped to the data); only target weeks inside ``eval_weeks`` count.
    Returns ``{length: ScoreReport}``.
    """
    config = BacktestConfig() if config is None else config
    h_max = max(config.horizons)
    lo = max(eval_weeks[0] - h_max, dataset.first_week + 3)
    hi = min(eval_weeks[1], dataset.last_week) - 1
    out = {}
    for length in lengths:
        cfg = replace(config, window_length=length, origins=(lo, hi))
        result = rolling_backtest(dataset, cfg)
        report, _ = score_backtest(dataset, {f"pinn-{length}w": result.forecasts},
                                   config.horizons, (eval_weeks[0], min(eval_weeks[1], dataset.last_week)))
        out[length] = report
    return out


def study_table(study: dict) -> list[tuple]:
    """Flatten a window-length study into ``(length, target, horizon, mase, wis)`` rows."""
    rows = []
    for length, report in study.items():
        for (method, target, h), c in report.cells.items():
            if method != "naive":
                rows.append((length, target, h, c.mase, c.wis))
    return rows


# run configuration files ---------------------------------------------------

CONFIG_KEYS = {
    "epochs": int, "learning_rate": float, "l2_coefficient": float, "w_ode": float,
    "equation_weights": "floats", "channel_weights": "floats",
    "collocation_per_week": int, "horizons": "ints", "origin_first": int, "origin_last": int,
    "window_length": "optint", "workers": int, "seed": int, "seed_policy": str,
}


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into typed overrides.

    Lists are comma separated; ``window_length = none`` means full history::

        epochs = 50000
        learning_rate = 1e-3
        l2_coefficient = 1e-5
        w_ode = 0.1
        equation_weights = 1,1,1,1,1,1,1,1,1
        collocation_per_week = 5
        horizons = 1,2,3,4
        origin_first = 17
        origin_last = 89
        workers = 4
        seed = 0
        seed_policy = per-origin
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or key not in CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown or malformed entry {raw!r}")
        kind = CONFIG_KEYS[key]
        if kind == "floats":
            out[key] = tuple(float(v) for v in value.split(","))
        elif kind == "ints":
            out[key] = tuple(int(v) for v in value.split(","))
        elif kind == "optint":
            out[key] = None if value.lower() in ("none", "") else int(value)
        else:
            out[key] = kind(value)
    return out


def build_config(overrides: dict, base: BacktestConfig | None = None) -> BacktestConfig:
    """Apply flat overrides (config-file keys) onto ``base``."""
    cfg = BacktestConfig() if base is None else base
    o = dict(overrides)
    train_kw = {k: o.pop(k) for k in ("epochs", "learning_rate", "l2_coefficient") if k in o}
    if "seed" in o:
        train_kw["seed"] = o["seed"]
    weights_kw = {}
    if "w_ode" in o:
        weights_kw["w_ode"] = o.pop("w_ode")
    if "equation_weights" in o:
        weights_kw["equation"] = o.pop("equation_weights")
    if "channel_weights" in o:
        weights_kw["channel"] = o.pop("channel_weights")
    fit_kw = {}
    if "collocation_per_week" in o:
        fit_kw["collocation_per_week"] = o.pop("collocation_per_week")
    fit = replace(cfg.fit, train=replace(cfg.fit.train, **train_kw),
                  weights=replace(cfg.fit.weights, **weights_kw), **fit_kw)
    top = {"fit": fit}
    if "origin_first" in o or "origin_last" in o:
        top["origins"] = (o.pop("origin_first", cfg.origins[0]), o.pop("origin_last", cfg.origins[1]))
    for k in ("horizons", "window_length", "workers", "seed", "seed_policy"):
        if k in o:
            top[k] = o.pop(k)
    if o:
        raise ValueError(f"unused config keys: {sorted(o)}")
    return replace(cfg, **top)


def load_config(path) -> BacktestConfig:
    return build_config(parse_config(Path(path).read_text()))


def config_summary(config: BacktestConfig) -> dict:
    t, w = config.fit.train, config.fit.weights
    return {
        "epochs": t.epochs, "learning_rate": t.learning_rate, "l2_coefficient": t.l2_coefficient,
        "w_ode": w.w_ode, "equation_weights": list(w.equation), "channel_weights": list(w.channel),
        "collocation_per_week": config.fit.collocation_per_week,
        "horizons": list(config.horizons), "origins": list(config.origins),
        "window_length": config.window_length, "workers": config.workers,
        "seed": config.seed, "seed_policy": config.seed_policy,
    }

