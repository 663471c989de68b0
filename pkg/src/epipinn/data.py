"""Surveillance series ingestion and weekly preprocessing.

Raw inputs are one ``date,value`` CSV per channel. The preprocessing chain
is: vaccine imputation, alignment to a shared daily calendar, trailing
7-day moving average, weekly aggregation, hospitalization trim, cutoff
truncation, and per-channel min-max scaling.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import (AllMissing, EmptySeries, MalformedRow, MissingFile,
                     MissingValue, TooShort)

# raw channel labels -> column names of the weekly dataset
RAW_CHANNELS = ("cases", "deaths", "hospitalizations", "mobility", "vaccine_doses")
CHANNELS = ("cases", "deaths", "hosp", "mobility", "vaccines")
TARGETS = ("cases", "deaths", "hosp")
RAW_TO_COLUMN = dict(zip(RAW_CHANNELS, CHANNELS))
AGGREGATION = {"cases": "sum", "deaths": "sum", "hosp": "sum",
               "mobility": "mean", "vaccines": "mean"}

HOSP_TRIM_WEEKS = 20
CUTOFF_WEEK = 110


@dataclass(frozen=True)
class RawSeries:
    name: str
    dates: np.ndarray   # datetime64[D], strictly increasing
    values: np.ndarray  # float, NaN marks a missing value

    def __len__(self):
        return len(self.dates)


@dataclass(frozen=True)
class WeeklySeries:
    name: str
    weeks: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.weeks)


@dataclass(frozen=True)
class ScalingSpec:
    offset: dict
    scale: dict

    def __post_init__(self):
        for ch, s in self.scale.items():
            if not s > 0:
                raise ValueError(f"scale for {ch} must be positive, got {s}")

    def normalize(self, channel, x):
        return (np.asarray(x, dtype=float) - self.offset[channel]) / self.scale[channel]

    def denormalize(self, channel, z):
        return np.asarray(z, dtype=float) * self.scale[channel] + self.offset[channel]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("channel,offset,scale\n")
        for ch in self.scale:
            buf.write(f"{ch},{_fmt(self.offset[ch])},{_fmt(self.scale[ch])}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScalingSpec":
        offset, scale = {}, {}
        for row in csv.DictReader(io.StringIO(text)):
            offset[row["channel"]] = float(row["offset"])
            scale[row["channel"]] = float(row["scale"])
        return cls(offset, scale)


@dataclass(frozen=True)
class Dataset:
    """Weekly channels on a shared, contiguous week axis.

    ``values`` holds the channels in :data:`CHANNELS` order, in original
    units; NaN marks weeks a channel does not cover (the trimmed start of
    hospitalizations). ``scaling`` is set once :func:`normalize` has run and
    ``normalized`` then holds the scaled copy.
    """
    weeks: np.ndarray
    values: np.ndarray
    scaling: ScalingSpec | None = None
    normalized: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        weeks = np.asarray(self.weeks)
        if weeks.ndim != 1 or len(weeks) == 0:
            raise EmptySeries("dataset has no weeks")
        if np.any(np.diff(weeks) != 1):
            raise ValueError("dataset weeks must be contiguous")
        if self.values.shape != (len(weeks), len(CHANNELS)):
            raise ValueError(f"values shape {self.values.shape} does not match weeks")

    @property
    def n_weeks(self) -> int:
        return len(self.weeks)

    @property
    def first_week(self) -> int:
        return int(self.weeks[0])

    @property
    def last_week(self) -> int:
        return int(self.weeks[-1])

    def column(self, channel: str) -> np.ndarray:
        return self.values[:, CHANNELS.index(channel)]

    def series(self, channel: str) -> WeeklySeries:
        col = self.column(channel)
        keep = ~np.isnan(col)
        return WeeklySeries(channel, self.weeks[keep].copy(), col[keep].copy())

    def value(self, channel: str, week: int) -> float:
        i = week - self.first_week
        if i < 0 or i >= self.n_weeks:
            return math.nan
        return float(self.column(channel)[i])

    def slice_weeks(self, first: int, last: int) -> "Dataset":
        lo = max(first, self.first_week) - self.first_week
        hi = min(last, self.last_week) - self.first_week + 1
        norm = None if self.normalized is None else self.normalized[lo:hi].copy()
        return Dataset(self.weeks[lo:hi].copy(), self.values[lo:hi].copy(), self.scaling, norm)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("week," + ",".join(CHANNELS) + "\n")
        for w, row in zip(self.weeks, self.values):
            buf.write(f"{int(w)}," + ",".join("" if np.isnan(x) else _fmt(x) for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, scaling: ScalingSpec | None = None) -> "Dataset":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise EmptySeries("dataset file has no rows")
        missing = [c for c in ("week",) + CHANNELS if c not in rows[0]]
        if missing:
            raise ValueError(f"dataset file lacks columns {missing}")
        weeks = np.array([int(r["week"]) for r in rows])
        values = np.array([[float(r[c]) if r[c] != "" else np.nan for c in CHANNELS] for r in rows])
        ds = cls(weeks, values)
        return ds if scaling is None else apply_scaling(ds, scaling)


def _fmt(x) -> str:
    return repr(float(x))


# loading -----------------------------------------------------------------

def load_csv(path, schema: str) -> RawSeries:
    """Read a canonical ``date,value`` channel file, sorted by date.

    Empty values are only accepted for ``vaccine_doses``.
    """
    if schema not in RAW_CHANNELS:
        raise ValueError(f"unknown channel {schema!r}; expected one of {RAW_CHANNELS}")
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{schema}: no such file {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "value"]:
            raise MalformedRow(path, 1, f"expected header 'date,value', got {header}")
        dates, values = [], []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise MalformedRow(path, lineno, f"expected 2 fields, got {len(row)}")
            try:
                d = date.fromisoformat(row[0].strip())
            except ValueError:
                raise MalformedRow(path, lineno, f"unparseable date {row[0]!r}") from None
            text = row[1].strip()
            if text == "":
                if schema != "vaccine_doses":
                    raise MissingValue(f"{path}:{lineno}: missing value in {schema}")
                v = math.nan
            else:
                try:
                    v = float(text)
                except ValueError:
                    raise MalformedRow(path, lineno, f"bad number {text!r}") from None
                if not math.isfinite(v):
                    raise MalformedRow(path, lineno, f"non-finite value {text!r}")
            dates.append(d)
            values.append(v)
    if not dates:
        raise EmptySeries(f"{path}: no data rows")
    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    d_arr = np.array(dates, dtype="datetime64[D]")[order]
    if np.any(np.diff(d_arr) == np.timedelta64(0, "D")):
        dup = d_arr[np.flatnonzero(np.diff(d_arr) == np.timedelta64(0, "D"))[0]]
        raise MalformedRow(path, 0, f"duplicate date {dup}")
    return RawSeries(schema, d_arr, np.array(values, dtype=float)[order])


def write_raw_csv(path, series: RawSeries) -> None:
    lines = ["date,value"]
    for d, v in zip(series.dates, series.values):
        lines.append(f"{d},{'' if np.isnan(v) else _fmt(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


# daily operations --------------------------------------------------------

def _daily_calendar(series: RawSeries, start=None) -> RawSeries:
    start = series.dates[0] if start is None else np.datetime64(start, "D")
    end = series.dates[-1]
    cal = np.arange(start, end + np.timedelta64(1, "D"), dtype="datetime64[D]")
    vals = np.full(len(cal), np.nan)
    pos = (series.dates - start).astype(int)
    keep = pos >= 0
    vals[pos[keep]] = series.values[keep]
    return RawSeries(series.name, cal, vals)


def impute_vaccine(series: RawSeries, start=None) -> RawSeries:
    """Fill the vaccine series on a complete daily calendar.

    Days before the first reported value become 0; interior gaps (empty
    values or absent dates) are linearly interpolated between the nearest
    reported neighbours. ``start`` extends the calendar back to an earlier
    date, filled with zeros.
    """
    full = _daily_calendar(series, start)
    vals = full.values.copy()
    reported = np.flatnonzero(~np.isnan(vals))
    if len(reported) == 0:
        raise AllMissing(f"{series.name}: no reported values")
    vals[:reported[0]] = 0.0
    gaps = np.isnan(vals)
    if gaps.any():
        x = np.arange(len(vals))
        vals[gaps] = np.interp(x[gaps], x[~gaps], vals[~gaps])
    return RawSeries(series.name, full.dates, vals)


def moving_average_7d(series: RawSeries) -> RawSeries:
    """Trailing 7-day mean; the first 6 days are dropped."""
    if len(series) < 7:
        raise TooShort(f"{series.name}: need >= 7 days for a 7-day average, got {len(series)}")
    c = np.cumsum(np.concatenate([[0.0], series.values]))
    avg = (c[7:] - c[:-7]) / 7.0
    return RawSeries(series.name, series.dates[6:], avg)


def aggregate_weekly(series: RawSeries, mode: str, first_week: int = 1) -> WeeklySeries:
    """Non-overlapping 7-day blocks from the first date; partial tail dropped."""
    if mode not in ("sum", "mean"):
        raise ValueError(f"mode must be 'sum' or 'mean', got {mode!r}")
    n = len(series) // 7
    if n == 0:
        raise TooShort(f"{series.name}: need >= 7 days for a weekly total, got {len(series)}")
    blocks = series.values[:7 * n].reshape(n, 7)
    vals = blocks.sum(axis=1) if mode == "sum" else blocks.mean(axis=1)
    return WeeklySeries(series.name, np.arange(first_week, first_week + n), vals)


# weekly operations -------------------------------------------------------

def trim_hospitalizations(series: WeeklySeries, weeks: int = HOSP_TRIM_WEEKS) -> WeeklySeries:
    """Drop the first ``weeks`` weeks, keeping the original week numbers."""
    if len(series) <= weeks:
        raise TooShort(f"{series.name}: need more than {weeks} weeks to trim, got {len(series)}")
    return WeeklySeries(series.name, series.weeks[weeks:], series.values[weeks:])


def truncate_after_week(dataset: Dataset, cutoff: int = CUTOFF_WEEK) -> Dataset:
    if cutoff < 1:
        raise ValueError("cutoff week must be >= 1")
    if dataset.last_week <= cutoff:
        return dataset
    return dataset.slice_weeks(dataset.first_week, cutoff)


def normalize(dataset: Dataset) -> tuple[Dataset, ScalingSpec]:
    """Min-max scale each channel to [0, 1] over its present values."""
    offset, scale = {}, {}
    for j, ch in enumerate(CHANNELS):
        col = dataset.values[:, j]
        present = col[~np.isnan(col)]
        if len(present) == 0:
            raise EmptySeries(f"channel {ch} has no values")
        lo, hi = float(present.min()), float(present.max())
        offset[ch] = lo
        scale[ch] = hi - lo if hi > lo else 1.0
    spec = ScalingSpec(offset, scale)
    return apply_scaling(dataset, spec), spec


def apply_scaling(dataset: Dataset, spec: ScalingSpec) -> Dataset:
    norm = np.column_stack([spec.normalize(ch, dataset.values[:, j])
                            for j, ch in enumerate(CHANNELS)])
    return Dataset(dataset.weeks, dataset.values, spec, norm)


def denormalize(dataset: Dataset) -> np.ndarray:
    if dataset.scaling is None:
        raise ValueError("dataset is not normalized")
    return np.column_stack([dataset.scaling.denormalize(ch, dataset.normalized[:, j])
                            for j, ch in enumerate(CHANNELS)])


def dataset_from_weekly(series: dict) -> Dataset:
    """Assemble weekly channel series (keyed by column name) on a shared axis."""
    first = min(int(s.weeks[0]) for s in series.values())
    last = max(int(s.weeks[-1]) for s in series.values())
    weeks = np.arange(first, last + 1)
    values = np.full((len(weeks), len(CHANNELS)), np.nan)
    for j, ch in enumerate(CHANNELS):
        s = series[ch]
        values[s.weeks - first, j] = s.values
    return Dataset(weeks, values)


# full chain --------------------------------------------------------------

@dataclass
class PreprocessSummary:
    start: str
    end: str
    weeks_retained: int
    hosp_first_week: int
    truncated_weeks: int


def preprocess(raw: dict, hosp_trim: int = HOSP_TRIM_WEEKS,
               cutoff: int = CUTOFF_WEEK) -> tuple[Dataset, ScalingSpec, PreprocessSummary]:
    """Raw daily series (keyed by raw channel label) -> normalized weekly dataset.

    The shared calendar starts at the latest first date among the count and
    mobility channels and ends at the earliest last date of all channels.
    The vaccine series is zero-extended back to the shared start.
    """
    missing = [c for c in RAW_CHANNELS if c not in raw]
    if missing:
        raise MissingFile(f"missing raw channel(s): {', '.join(missing)}")
    core = [c for c in RAW_CHANNELS if c != "vaccine_doses"]
    start = max(raw[c].dates[0] for c in core)
    end = min(raw[c].dates[-1] for c in RAW_CHANNELS)
    if end < start:
        raise TooShort("channels do not overlap in time")
    vacc = raw["vaccine_doses"]
    vacc = impute_vaccine(vacc, start=min(start, vacc.dates[0]))
    weekly = {}
    for name in RAW_CHANNELS:
        s = vacc if name == "vaccine_doses" else _daily_calendar(raw[name])
        keep = (s.dates >= start) & (s.dates <= end)
        s = RawSeries(name, s.dates[keep], s.values[keep])
        if np.isnan(s.values).any():
            first_gap = s.dates[np.flatnonzero(np.isnan(s.values))[0]]
            raise MissingValue(f"{name}: missing value on {first_gap}")
        col = RAW_TO_COLUMN[name]
        weekly[col] = aggregate_weekly(moving_average_7d(s), AGGREGATION[col])
    weekly["hosp"] = trim_hospitalizations(weekly["hosp"], hosp_trim)
    ds = dataset_from_weekly(weekly)
    n_before = ds.n_weeks
    ds = truncate_after_week(ds, cutoff)
    ds, spec = normalize(ds)
    summary = PreprocessSummary(str(start), str(end), ds.n_weeks,
                                int(weekly["hosp"].weeks[0]), n_before - ds.n_weeks)
    return ds, spec, summary


def load_raw_dir(raw_dir) -> dict:
    """Load ``<channel>.csv`` for every raw channel label in ``raw_dir``."""
    raw_dir = Path(raw_dir)
    return {name: load_csv(raw_dir / f"{name}.csv", name) for name in RAW_CHANNELS}


def write_dataset(path, dataset: Dataset, scaling: ScalingSpec) -> Path:
    """Write the dataset CSV and its ``<stem>.scaling.csv`` sidecar."""
    path = Path(path)
    path.write_text(dataset.to_csv())
    side = scaling_path(path)
    side.write_text(scaling.to_csv())
    return side


def scaling_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".scaling.csv")


def read_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no dataset file {path}")
    side = scaling_path(path)
    spec = ScalingSpec.from_csv(side.read_text()) if side.exists() else None
    ds = Dataset.from_csv(path.read_text())
    if spec is None:
        ds, spec = normalize(ds)
    return apply_scaling(ds, spec)
