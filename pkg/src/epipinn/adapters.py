"""Convert upstream surveillance exports to canonical ``date,value`` series.

Supported sources:

* JHU CSSE ``time_series_covid19_{confirmed,deaths}_US.csv`` (wide, one
  column per ``m/d/yy`` date, cumulative counts per county);
* HHS "COVID-19 Reported Patient Impact and Hospital Capacity by State
  Timeseries" (one row per state and day);
* Google ``Global_Mobility_Report.csv``;
* govex ``vaccine_data_us_timeline.csv`` (long format, cumulative doses).
"""

from __future__ import annotations

import csv
import io
import urllib.request
from collections import defaultdict
from datetime import date, datetime
from pathlib import Path

import numpy as np

from .data import RawSeries, write_raw_csv
from .errors import EmptySeries, MalformedRow

HHS_FIELDS = ("previous_day_admission_adult_covid_confirmed",
              "previous_day_admission_pediatric_covid_confirmed")
MOBILITY_FIELD = "residential_percent_change_from_baseline"

SOURCE_URLS = {
    "cases": "https://raw.githubusercontent.com/CSSEGISandData/COVID-19/master/"
             "csse_covid_19_data/csse_covid_19_time_series/time_series_covid19_confirmed_US.csv",
    "deaths": "https://raw.githubusercontent.com/CSSEGISandData/COVID-19/master/"
              "csse_covid_19_data/csse_covid_19_time_series/time_series_covid19_deaths_US.csv",
    "hospitalizations": "https://healthdata.gov/api/views/g62h-syeh/rows.csv?accessType=DOWNLOAD",
    "mobility": "https://www.gstatic.com/covid19/mobility/Global_Mobility_Report.csv",
    "vaccine_doses": "https://raw.githubusercontent.com/govex/COVID-19/master/data_tables/"
                     "vaccine_data/us_data/time_series/vaccine_data_us_timeline.csv",
}

STATE_CODES = {"California": "CA"}


def _parse_date(text: str) -> date:
    text = text.strip()
    for fmt in ("%Y-%m-%d", "%Y/%m/%d", "%m/%d/%y", "%m/%d/%Y",
                "%Y/%m/%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S.%f"):
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            pass
    raise ValueError(f"unrecognised date {text!r}")


def _series(name, by_date: dict) -> RawSeries:
    if not by_date:
        raise EmptySeries(f"{name}: no rows matched")
    days = sorted(by_date)
    return RawSeries(name, np.array(days, dtype="datetime64[D]"),
                     np.array([by_date[d] for d in days], dtype=float))


def jhu_wide(text: str, state: str, kind: str) -> RawSeries:
    """Daily new counts for ``state`` from a JHU CSSE US time-series file.

    County rows are summed, then differenced; negative daily revisions are
    clipped to zero. ``kind`` is ``cases`` or ``deaths``.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    try:
        state_col = header.index("Province_State")
    except ValueError:
        raise MalformedRow("<jhu>", 1, "no Province_State column") from None
    date_cols = []
    for j, h in enumerate(header):
        try:
            date_cols.append((j, datetime.strptime(h, "%m/%d/%y").date()))
        except ValueError:
            continue
    totals = np.zeros(len(date_cols))
    found = False
    for row in reader:
        if row and row[state_col] == state:
            found = True
            totals += np.array([float(row[j] or 0) for j, _ in date_cols])
    if not found:
        raise EmptySeries(f"no rows for {state}")
    daily = np.clip(np.diff(totals, prepend=0.0), 0.0, None)
    return _series(kind, {d: v for (_, d), v in zip(date_cols, daily)})


def hhs_admissions(text: str, state: str) -> RawSeries:
    """Adult plus pediatric confirmed admissions (previous day) per day."""
    code = STATE_CODES.get(state, state)
    by_date = defaultdict(float)
    reader = csv.DictReader(io.StringIO(text))
    missing = [f for f in ("state", "date") + HHS_FIELDS if f not in (reader.fieldnames or ())]
    if missing:
        raise MalformedRow("<hhs>", 1, f"missing columns {missing}")
    for row in reader:
        if row["state"] != code:
            continue
        d = _parse_date(row["date"])
        by_date[d] += sum(float(row[f] or 0) for f in HHS_FIELDS)
    return _series("hospitalizations", by_date)


def google_mobility(text: str, state: str, country: str = "US") -> RawSeries:
    """State-level residential percent change from baseline."""
    by_date = {}
    for row in csv.DictReader(io.StringIO(text)):
        if (row.get("country_region_code") == country and row.get("sub_region_1") == state
                and not row.get("sub_region_2") and not row.get("metro_area")):
            if row[MOBILITY_FIELD] != "":
                by_date[_parse_date(row["date"])] = float(row[MOBILITY_FIELD])
    return _series("mobility", by_date)


def govex_vaccines(text: str, state: str) -> RawSeries:
    """Cumulative administered doses (all vaccine types)."""
    by_date = {}
    for row in csv.DictReader(io.StringIO(text)):
        if row.get("Province_State") == state and row.get("Vaccine_Type", "All") == "All":
            v = row.get("Doses_admin", "")
            by_date[_parse_date(row["Date"])] = float(v) if v != "" else np.nan
    return _series("vaccine_doses", by_date)


def convert_all(sources: dict, out_dir, state: str = "California") -> dict:
    """Convert upstream files (keyed by raw channel label) into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    converters = {
        "cases": lambda t: jhu_wide(t, state, "cases"),
        "deaths": lambda t: jhu_wide(t, state, "deaths"),
        "hospitalizations": lambda t: hhs_admissions(t, state),
        "mobility": lambda t: google_mobility(t, state),
        "vaccine_doses": lambda t: govex_vaccines(t, state),
    }
    written = {}
    for name, src in sources.items():
        series = converters[name](Path(src).read_text())
        path = out_dir / f"{name}.csv"
        write_raw_csv(path, series)
        written[name] = path
    return written


def fetch(out_dir, timeout: float = 120.0) -> dict:
    """Download the upstream files (best effort, no retries or caching)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, url in SOURCE_URLS.items():
        path = out_dir / f"upstream_{name}.csv"
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            path.write_bytes(resp.read())
        paths[name] = path
    return paths
