"""Point and probabilistic forecast scores: MAE, MASE, interval score, WIS."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .data import TARGETS, WeeklySeries
from .errors import (EmptyCell, EmptyInput, InvalidAlpha, InvalidInterval, LengthMismatch,
                     MissingQuantileLevel, OutOfRange, ZeroNaiveMae, ZeroNaiveWis)

WIS_ALPHAS = (0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def mae(predictions, observations) -> float:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(observations, dtype=float)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape} predictions vs {y.shape} observations")
    if p.size == 0:
        raise EmptyInput("mae of an empty set")
    return float(np.mean(np.abs(p - y)))


def naive_block(series: WeeklySeries, origin_week: int, horizon: int) -> list[float]:
    """Horizon-matched naive forecasts for weeks ``origin+1 .. origin+horizon``.

    The last ``horizon`` observed weeks are shifted forward by ``horizon``.
    """
    lookup = dict(zip(series.weeks.tolist(), series.values.tolist()))
    weeks = range(origin_week - horizon + 1, origin_week + 1)
    missing = [w for w in weeks if w not in lookup]
    if horizon < 1 or missing:
        raise OutOfRange(f"{series.name}: no observations for weeks {missing} "
                         f"(origin {origin_week}, horizon {horizon})")
    return [float(lookup[w]) for w in weeks]


def naive_forecast(series: WeeklySeries, origin_week: int, horizon: int) -> float:
    """Naive forecast of week ``origin_week + horizon`` (the value at ``origin_week``)."""
    return naive_block(series, origin_week, horizon)[-1]


def mase(model_preds, observations, naive_preds) -> float:
    denom = mae(naive_preds, observations)
    if denom == 0:
        raise ZeroNaiveMae("naive forecasts are exact on this evaluation set")
    return mae(model_preds, observations) / denom


def interval_score(lower: float, upper: float, alpha: float, y: float) -> float:
    """Width plus ``2/alpha`` times the distance of ``y`` outside ``[lower, upper]``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    if lower > upper:
        raise InvalidInterval(f"lower {lower} exceeds upper {upper}")
    score = upper - lower
    if y < lower:
        score += 2.0 / alpha * (lower - y)
    elif y > upper:
        score += 2.0 / alpha * (y - upper)
    return score


def wis(forecast, y: float, alphas=WIS_ALPHAS) -> float:
    """Weighted interval score of a quantile forecast against observation ``y``.

    Uses the median and the central ``(1 - alpha)`` intervals bounded by the
    ``alpha/2`` and ``1 - alpha/2`` quantiles, with weights ``alpha/2`` and
    ``1/2`` for the median, normalized by ``K + 1/2``.
    """
    def q(level):
        try:
            return forecast.quantile(level)
        except KeyError:
            raise MissingQuantileLevel(f"forecast lacks the {level} quantile") from None

    total = 0.5 * abs(y - q(0.5))
    for a in alphas:
        total += a / 2.0 * interval_score(q(a / 2.0), q(1.0 - a / 2.0), a, y)
    return total / (len(alphas) + 0.5)


def scaled_wis(model_wis: float, naive_wis: float) -> float:
    if naive_wis <= 0:
        raise ZeroNaiveWis("naive WIS is zero on this evaluation set")
    return model_wis / naive_wis


@dataclass(frozen=True)
class ScoreCell:
    mase: float
    wis: float
    scaled_wis: float
    n_evaluated: int


REPORT_COLUMNS = ("method", "target", "horizon", "mase", "wis", "scaled_wis", "n_evaluated")


@dataclass
class ScoreReport:
    cells: dict = field(default_factory=dict)  # (method, target, horizon) -> ScoreCell

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(REPORT_COLUMNS) + "\n")
        for (method, target, h), c in self.cells.items():
            buf.write(f"{method},{target},{h},{c.mase!r},{c.wis!r},{c.scaled_wis!r},{c.n_evaluated}\n")
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'method':<10} {'target':<7} {'h':>2} {'MASE':>8} {'WIS':>12} {'sWIS':>8} {'n':>5}"]
        for (method, target, h), c in self.cells.items():
            lines.append(f"{method:<10} {target:<7} {h:>2} {c.mase:>8.3f} {c.wis:>12.2f} "
                         f"{c.scaled_wis:>8.3f} {c.n_evaluated:>5}")
        return "\n".join(lines)

    def get(self, method, target, horizon) -> ScoreCell:
        return self.cells[(method, target, horizon)]


def build_report(results: dict, truth, naive: str = "naive", targets=TARGETS,
                 horizons=(1, 2, 3, 4)) -> ScoreReport:
    """Score every method against the naive baseline.

    ``results`` maps method name to a list of quantile forecasts and must
    contain the ``naive`` entry. ``truth(target, week)`` returns the observed
    value or NaN. A cell aggregates the target weeks where the observation,
    the method's forecast and the naive forecast all exist.
    """
    if naive not in results:
        raise KeyError(f"results need a {naive!r} entry for scaling")

    def index(forecasts):
        return {(f.target, f.horizon, f.origin_week): f for f in forecasts}

    base = index(results[naive])
    report = ScoreReport()
    for method, forecasts in results.items():
        own = index(forecasts)
        for target in targets:
            for h in horizons:
                keys = sorted(k for k in own if k[0] == target and k[1] == h and k in base)
                rows = []
                for k in keys:
                    y = truth(target, k[2] + h)
                    if not math.isnan(y):
                        rows.append((own[k], base[k], y))
                if not rows:
                    raise EmptyCell(f"no evaluable forecasts for {method}/{target}/h{h}")
                y = [r[2] for r in rows]
                m = mase([r[0].point for r in rows], y, [r[1].point for r in rows])
                w_model = float(np.mean([wis(r[0], yy) for r, yy in zip(rows, y)]))
                w_naive = float(np.mean([wis(r[1], yy) for r, yy in zip(rows, y)]))
                report.cells[(method, target, h)] = ScoreCell(
                    m, w_model, scaled_wis(w_model, w_naive), len(rows))
    return report
