"""Synthetic weekly datasets generated from the compartment model.

Used for recovery experiments and the synthetic backtest benchmark: the
truth is an RK4 trajectory, so a forecaster can be checked against known
dynamics. Mobility and vaccine covariates are simple deterministic curves
(mobility tracks the transmission rate, vaccines follow a logistic
roll-out).
"""

from __future__ import annotations

import numpy as np

from .compartments import IDX, Scenario, integrate_rk4, parse_scenario
from .data import CHANNELS, Dataset, normalize

TWO_PEAK_SCENARIO = """\
# two-wave epidemic over ~60 weeks
L = 3000
Y = 3000
Z = 400
H = 300
D = 30
beta = (0, 0.32) (60, 0.32) (120, 0.19) (190, 0.19) (240, 0.34) (290, 0.34) (340, 0.2) (430, 0.2)
beta_interp = cosine
"""


def two_peak_scenario() -> Scenario:
    return parse_scenario(TWO_PEAK_SCENARIO)


def simulate_weekly(scenario: Scenario, n_weeks: int, dt: float = 0.25) -> np.ndarray:
    """Noise-free weekly channels (original units), shape ``(n_weeks, 5)``.

    Counts are 7-day differences of the cumulative counters; mobility and
    vaccines are weekly means of their daily curves.
    """
    days = 7 * n_weeks
    times, states = integrate_rk4(scenario.initial, scenario.beta, scenario.params, 0.0, days, dt)
    per_day = int(round(1.0 / dt))
    week_ends = states[::7 * per_day]
    if len(week_ends) != n_weeks + 1:
        raise ValueError("dt must divide one day evenly")
    weekly = np.diff(week_ends[:, [IDX["Z_r"], IDX["D_r"], IDX["A"]]], axis=0)
    daily_t = np.arange(days) + 0.5
    mobility = mobility_curve(scenario, daily_t).reshape(n_weeks, 7).mean(axis=1)
    vaccines = vaccine_curve(daily_t, days).reshape(n_weeks, 7).mean(axis=1)
    return np.column_stack([weekly, mobility, vaccines])


def mobility_curve(scenario: Scenario, t):
    # residential time rises when transmission falls
    beta = np.asarray(scenario.beta(t), dtype=float)
    return 12.0 - 60.0 * (beta - 0.2)


def vaccine_curve(t, horizon_days, total=6.0e7):
    mid = 0.55 * horizon_days
    return total / (1.0 + np.exp(-(np.asarray(t, dtype=float) - mid) / 25.0))


def synthetic_dataset(scenario: Scenario | None = None, n_weeks: int = 60,
                      noise: float = 0.0, seed: int = 0) -> Dataset:
    """Normalized synthetic dataset with optional multiplicative noise.

    Every value is multiplied by ``1 + noise * e`` with ``e`` standard
    normal drawn from a PCG64 generator seeded with ``seed``.
    """
    scenario = two_peak_scenario() if scenario is None else scenario
    values = simulate_weekly(scenario, n_weeks)
    if noise:
        rng = np.random.Generator(np.random.PCG64(seed))
        values = values * (1.0 + noise * rng.standard_normal(values.shape))
    ds, _ = normalize(Dataset(np.arange(1, n_weeks + 1), values))
    return ds


__all__ = ["CHANNELS", "TWO_PEAK_SCENARIO", "simulate_weekly", "synthetic_dataset",
           "two_peak_scenario"]
