"""Gaussian quantile forecasts built from point forecasts and past errors."""

from __future__ import annotations

import csv
import io
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .errors import InvalidProbability, SchemaMismatch

HUB_LEVELS = (0.010, 0.025, 0.050, 0.100, 0.150, 0.200, 0.250, 0.300, 0.350, 0.400, 0.450,
              0.500, 0.550, 0.600, 0.650, 0.700, 0.750, 0.800, 0.850, 0.900, 0.950, 0.975,
              0.990)

# Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def inverse_normal_cdf(p: float) -> float:
    """Standard normal quantile, i.e. ``sqrt(2) * erfinv(2p - 1)``.

    A rational first guess (relative error ~1e-9) is polished with one
    Halley step on ``Phi(z) - p`` using ``math.erfc``.
    """
    if not 0.0 < p < 1.0 or math.isnan(p):
        raise InvalidProbability(f"probability must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        z = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        z = -((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # Halley refinement; work with the smaller tail for accuracy
    if z < 0:
        e = 0.5 * math.erfc(-z / math.sqrt(2.0)) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(z / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * z * z)
    return z - u / (1.0 + 0.5 * z * u)


def normal_cdf(x: float) -> float:
    """Standard normal CDF from a Taylor series or a continued fraction.

    Independent of ``math.erf``: for ``|x| < 3`` the series
    ``Phi(x) = 1/2 + phi(x) * sum x^(2n+1) / (1*3*...*(2n+1))`` is summed;
    beyond, the upper tail is evaluated with Lentz's method on the Laplace
    continued fraction of the Mills ratio.
    """
    if math.isnan(x):
        return math.nan
    if x == math.inf:
        return 1.0
    if x == -math.inf:
        return 0.0
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if abs(x) < 3.0:
        term = x
        total = x
        n = 1
        while abs(term) > 1e-17 * abs(total):
            term *= x * x / (2 * n + 1)
            total += term
            n += 1
        return 0.5 + pdf * total
    t = abs(x)
    # Mills ratio R(t) = 1/(t + 1/(t + 2/(t + 3/(t + ...))))
    tiny = 1e-300
    f = t
    C = t
    D = 0.0
    for k in range(1, 500):
        D = t + k * D
        D = tiny if D == 0 else D
        C = t + k / C
        C = tiny if C == 0 else C
        D = 1.0 / D
        delta = C * D
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    tail = pdf / f
    return 1.0 - tail if x > 0 else tail


def gaussian_quantile(mu: float, sigma: float, p: float) -> float:
    """``mu + sigma * sqrt(2) * erfinv(2p - 1)``."""
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"probability must lie in (0, 1), got {p}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return float(mu)
    return float(mu + sigma * inverse_normal_cdf(p))


@dataclass
class ErrorHistory:
    """Signed errors (forecast - observed) grouped by (target, horizon)."""
    errors: dict = field(default_factory=lambda: defaultdict(list))

    def add(self, target: str, horizon: int, error: float) -> None:
        if not math.isfinite(error):
            raise ValueError("forecast errors must be finite")
        self.errors[(target, horizon)].append(float(error))

    def get(self, target: str, horizon: int) -> list:
        return list(self.errors.get((target, horizon), ()))


def estimate_sigma(history: ErrorHistory, target: str, horizon: int, mu: float = 0.0) -> float:
    """Population standard deviation of the stored errors.

    With a single stored error its magnitude is used; with none, 10% of the
    point forecast.
    """
    errs = history.get(target, horizon)
    if len(errs) >= 2:
        return float(np.std(errs))
    if errs:
        return abs(errs[-1])
    return 0.1 * abs(mu)


@dataclass(frozen=True)
class QuantileForecast:
    target: str
    horizon: int
    origin_week: int
    mu: float
    sigma: float
    levels: tuple
    values: tuple

    @property
    def target_week(self) -> int:
        return self.origin_week + self.horizon

    @property
    def point(self) -> float:
        return max(self.mu, 0.0)

    def quantile(self, level: float) -> float:
        for lv, v in zip(self.levels, self.values):
            if abs(lv - level) < 1e-9:
                return v
        raise KeyError(level)


def build_quantile_forecast(point, sigma: float, levels=HUB_LEVELS) -> QuantileForecast:
    """Gaussian quantiles at ``levels`` around ``point.value``, clamped at 0."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    mu = float(point.value)
    values = tuple(max(gaussian_quantile(mu, sigma, p), 0.0) for p in levels)
    return QuantileForecast(point.target, point.horizon, point.origin_week, mu, float(sigma),
                            tuple(levels), values)


def causal_quantiles(points, truth, levels=HUB_LEVELS) -> list[QuantileForecast]:
    """Quantile forecasts whose sigma only uses already-observable errors.

    ``points`` are point forecasts from a backtest; ``truth(target, week)``
    returns the observed value or NaN. At origin ``o`` the history holds the
    errors of every earlier forecast whose target week is ``<= o``.
    """
    by_origin = defaultdict(list)
    for p in points:
        by_origin[p.origin_week].append(p)
    pending = sorted(points, key=lambda p: (p.target_week, p.origin_week, p.target, p.horizon))
    history = ErrorHistory()
    i = 0
    out = []
    for origin in sorted(by_origin):
        while i < len(pending) and pending[i].target_week <= origin:
            p = pending[i]
            y = truth(p.target, p.target_week)
            if p.origin_week < origin and not math.isnan(y):
                history.add(p.target, p.horizon, p.value - y)
            i += 1
        for p in sorted(by_origin[origin], key=lambda p: (p.target, p.horizon)):
            sigma = estimate_sigma(history, p.target, p.horizon, p.value)
            out.append(build_quantile_forecast(p, sigma, levels))
    return out


# Hub CSV -----------------------------------------------------------------

HUB_COLUMNS = ("forecast_date", "target", "target_end_date", "type", "quantile", "value")
HUB_NAMES = {"cases": "case", "deaths": "death", "hosp": "hosp"}
_HUB_TARGET = re.compile(r"^(\d+) wk ahead inc (case|death|hosp)$")
DEFAULT_ANCHOR = date(2020, 7, 4)


def week_end_date(week: int, anchor: date = DEFAULT_ANCHOR) -> date:
    """Calendar date closing ``week`` (week 1 ends on ``anchor``)."""
    return anchor + timedelta(days=7 * (week - 1))


def date_to_week(d: date, anchor: date = DEFAULT_ANCHOR) -> int:
    days = (d - anchor).days
    if days % 7:
        raise SchemaMismatch(f"{d} is not a week-end date for anchor {anchor}")
    return days // 7 + 1


def hub_rows(forecasts, anchor: date = DEFAULT_ANCHOR):
    for q in forecasts:
        base = (week_end_date(q.origin_week, anchor).isoformat(),
                f"{q.horizon} wk ahead inc {HUB_NAMES[q.target]}",
                week_end_date(q.target_week, anchor).isoformat())
        yield base + ("point", "NA", repr(float(q.point)))
        for lv, v in zip(q.levels, q.values):
            yield base + ("quantile", f"{lv:.3f}", repr(float(v)))


def to_hub_csv(forecasts, anchor: date = DEFAULT_ANCHOR) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HUB_COLUMNS)
    w.writerows(hub_rows(forecasts, anchor))
    return buf.getvalue()


def from_hub_csv(text: str, anchor: date = DEFAULT_ANCHOR) -> list[QuantileForecast]:
    """Parse Hub rows back into forecasts (sigma is not stored; set to NaN)."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != HUB_COLUMNS:
        raise SchemaMismatch(f"expected columns {HUB_COLUMNS}, got {reader.fieldnames}")
    inverse = {v: k for k, v in HUB_NAMES.items()}
    groups = {}
    for lineno, row in enumerate(reader, 2):
        m = _HUB_TARGET.match(row["target"])
        if not m:
            raise SchemaMismatch(f"line {lineno}: unrecognised target {row['target']!r}")
        horizon, target = int(m.group(1)), inverse[m.group(2)]
        origin = date_to_week(date.fromisoformat(row["forecast_date"]), anchor)
        if date_to_week(date.fromisoformat(row["target_end_date"]), anchor) != origin + horizon:
            raise SchemaMismatch(f"line {lineno}: target_end_date inconsistent with horizon")
        g = groups.setdefault((origin, target, horizon), {"point": None, "q": {}})
        if row["type"] == "point":
            g["point"] = float(row["value"])
        elif row["type"] == "quantile":
            g["q"][float(row["quantile"])] = float(row["value"])
        else:
            raise SchemaMismatch(f"line {lineno}: unknown type {row['type']!r}")
    out = []
    for (origin, target, horizon), g in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        levels = tuple(sorted(g["q"]))
        values = tuple(g["q"][lv] for lv in levels)
        mu = g["point"]
        if mu is None:
            mu = g["q"].get(0.5, math.nan)
        out.append(QuantileForecast(target, horizon, origin, mu, math.nan, levels, values))
    return out
