"""Nine-compartment transmission model, residuals, and an RK4 integrator.

State order is ``X, L, Y, Z, Z_r, H, A, D, D_r``. Time is in days.
``Z_r``, ``A`` and ``D_r`` are cumulative counters; weekly reported cases,
hospital admissions and deaths are their 7-day differences.

    dX   = -beta X Y / N
    dL   =  beta X Y / N - eta L
    dY   =  eta L - gamma Y
    dZ   =  rho gamma Y - gamma_z Z
    dZ_r =  gamma_z Z
    dH   =  p_h gamma Y - gamma_h H
    dA   =  p_h gamma Y
    dD   =  p_d gamma_h H - gamma_d D
    dD_r =  gamma_d D
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InvalidSpan, NonFiniteError

COMPARTMENTS = ("X", "L", "Y", "Z", "Z_r", "H", "A", "D", "D_r")
IDX = {name: i for i, name in enumerate(COMPARTMENTS)}
CALIFORNIA_POPULATION = 39_512_223


@dataclass(frozen=True)
class RateParams:
    N: float = CALIFORNIA_POPULATION
    eta: float = 0.25
    gamma: float = 0.25
    gamma_d: float = 0.1
    gamma_z: float = 1.0
    gamma_h: float = 0.1
    rho: float = 0.5
    # trainable in the forecaster; these defaults only drive synthetic data
    p_h: float = 0.03
    p_d: float = 0.15

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError("population N must be positive")
        for name in ("eta", "gamma", "gamma_d", "gamma_z", "gamma_h"):
            if getattr(self, name) < 0:
                raise ValueError(f"rate {name} must be non-negative")
        for name in ("rho", "p_h", "p_d"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"probability {name} must lie in [0, 1]")


def state_vector(**values) -> np.ndarray:
    """Build a state array from keyword compartments; missing ones are zero."""
    out = np.zeros(len(COMPARTMENTS))
    for k, v in values.items():
        out[IDX[k]] = v
    return out


def rhs(state, beta, params: RateParams, p_h=None, p_d=None) -> np.ndarray:
    """Time derivatives of the state.

    ``state`` may be a single 9-vector or an array of shape ``(B, 9)`` with
    ``beta`` broadcasting against the leading axis. ``p_h``/``p_d`` override
    the values in ``params`` (the forecaster passes its trained estimates).
    """
    s = np.asarray(state, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(beta))):
        raise NonFiniteError("rhs received non-finite state or beta")
    p_h = params.p_h if p_h is None else p_h
    p_d = params.p_d if p_d is None else p_d
    X, L, Y, Z, _, H, _, D, _ = np.moveaxis(s, -1, 0)
    infection = beta * X * Y / params.N
    removal = params.gamma * Y
    hosp_in = p_h * removal
    d = np.empty(np.broadcast_shapes(s.shape, np.shape(infection) + (9,)))
    d[..., 0] = -infection
    d[..., 1] = infection - params.eta * L
    d[..., 2] = params.eta * L - removal
    d[..., 3] = params.rho * removal - params.gamma_z * Z
    d[..., 4] = params.gamma_z * Z
    d[..., 5] = hosp_in - params.gamma_h * H
    d[..., 6] = hosp_in
    d[..., 7] = p_d * params.gamma_h * H - params.gamma_d * D
    d[..., 8] = params.gamma_d * D
    return d


def rhs_vjp(state, beta, params: RateParams, cotangent, p_h=None, p_d=None):
    """Vector-Jacobian product of :func:`rhs`.

    Returns ``(g_state, g_beta, g_p_h, g_p_d)`` for the cotangent array
    (same shape as the rhs output). The probability gradients are summed
    over any batch axis.
    """
    s = np.asarray(state, dtype=float)
    c = np.asarray(cotangent, dtype=float)
    p_h = params.p_h if p_h is None else p_h
    p_d = params.p_d if p_d is None else p_d
    X, Y, H = s[..., 0], s[..., 2], s[..., 5]
    N, g = params.N, params.gamma
    g_inf = c[..., 1] - c[..., 0]
    out = np.zeros_like(s)
    out[..., 0] = g_inf * beta * Y / N
    out[..., 1] = params.eta * (c[..., 2] - c[..., 1])
    out[..., 2] = (g_inf * beta * X / N - g * c[..., 2] + params.rho * g * c[..., 3]
                   + p_h * g * (c[..., 5] + c[..., 6]))
    out[..., 3] = params.gamma_z * (c[..., 4] - c[..., 3])
    out[..., 5] = params.gamma_h * (p_d * c[..., 7] - c[..., 5])
    out[..., 7] = params.gamma_d * (c[..., 8] - c[..., 7])
    g_beta = g_inf * X * Y / N
    g_p_h = float(np.sum((c[..., 5] + c[..., 6]) * g * Y))
    g_p_d = float(np.sum(c[..., 7] * params.gamma_h * H))
    return out, g_beta, g_p_h, g_p_d


def residual(state, dstate, beta, params: RateParams, p_h=None, p_d=None) -> np.ndarray:
    """``dstate - rhs(state)``; zero along exact trajectories."""
    dstate = np.asarray(dstate, dtype=float)
    if not np.all(np.isfinite(dstate)):
        raise NonFiniteError("residual received non-finite derivatives")
    return dstate - rhs(state, beta, params, p_h, p_d)


def integrate_rk4(initial, beta_fn: Callable[[float], float], params: RateParams,
                  t0: float, t1: float, dt: float):
    """Classical fixed-step RK4 from ``t0`` to ``t1``.

    The last step is shortened so the trajectory lands exactly on ``t1``.
    Returns ``(times, states)`` with ``states`` of shape ``(n, 9)``; both
    endpoints are included.
    """
    if not t1 > t0:
        raise InvalidSpan(f"need t1 > t0, got [{t0}, {t1}]")
    if not (dt > 0 and dt <= t1 - t0):
        raise InvalidSpan(f"step {dt} invalid for span [{t0}, {t1}]")
    y = np.asarray(initial, dtype=float).copy()
    if y.shape != (9,) or not np.all(np.isfinite(y)):
        raise NonFiniteError("initial state must be a finite 9-vector")

    def f(t, s):
        return rhs(s, beta_fn(t), params)

    n_full = int(math.floor((t1 - t0) / dt + 1e-9))
    times = [t0 + k * dt for k in range(n_full + 1)]
    if t1 - times[-1] > 1e-12 * max(1.0, abs(t1)):
        times.append(t1)
    else:
        times[-1] = t1
    states = np.empty((len(times), 9))
    states[0] = y
    for k in range(1, len(times)):
        t, h = times[k - 1], times[k] - times[k - 1]
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteError(f"integration diverged at t={times[k]}")
        states[k] = y
    return np.asarray(times), states


# scenarios ---------------------------------------------------------------

@dataclass(frozen=True)
class BetaCurve:
    """Transmission rate interpolated between ``(t, beta)`` knots.

    ``kind="linear"`` is piecewise linear; ``kind="cosine"`` blends
    neighbouring knots with a half-cosine, giving a C1 curve. Outside the
    knot range the end values are held.
    """
    knots: tuple
    kind: str = "linear"

    def __post_init__(self):
        if len(self.knots) < 1:
            raise ValueError("beta curve needs at least one knot")
        ts = [k[0] for k in self.knots]
        if any(b <= a for a, b in zip(ts[:-1], ts[1:])):
            raise ValueError("beta knots must have strictly increasing times")
        if any(k[1] < 0 for k in self.knots):
            raise ValueError("beta knots must be non-negative")
        if self.kind not in ("linear", "cosine"):
            raise ValueError(f"unknown interpolation {self.kind!r}")

    def __call__(self, t):
        ts = np.array([k[0] for k in self.knots])
        bs = np.array([k[1] for k in self.knots])
        if self.kind == "linear":
            return np.interp(t, ts, bs)
        t_arr = np.clip(np.asarray(t, dtype=float), ts[0], ts[-1])
        i = np.clip(np.searchsorted(ts, t_arr, side="right") - 1, 0, max(len(ts) - 2, 0))
        if len(ts) == 1:
            return np.full_like(t_arr, bs[0])[()]
        frac = (t_arr - ts[i]) / (ts[i + 1] - ts[i])
        w = 0.5 - 0.5 * np.cos(np.pi * frac)
        return (bs[i] * (1 - w) + bs[i + 1] * w)[()]


@dataclass(frozen=True)
class Scenario:
    initial: np.ndarray
    params: RateParams
    beta: BetaCurve


_KNOT_RE = re.compile(r"\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)")


def parse_scenario(text: str) -> Scenario:
    """Parse a key-value scenario description.

    Lines are ``key = value``; ``#`` starts a comment. Keys are compartment
    names (initial state, default 0), any :class:`RateParams` field, plus
    ``beta`` (a list of ``(t, beta)`` knots) and ``beta_interp``
    (``linear`` or ``cosine``)::

        X = 39500000
        L = 2000
        Y = 2000
        gamma = 0.25
        beta = (0, 0.33) (70, 0.33) (120, 0.17) (200, 0.3)
        beta_interp = cosine
    """
    initial = {}
    overrides = {}
    knots = None
    kind = "linear"
    param_names = {f.name for f in fields(RateParams)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"scenario line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in IDX:
            initial[key] = float(value)
        elif key in param_names:
            overrides[key] = float(value)
        elif key == "beta":
            knots = tuple((float(a), float(b)) for a, b in _KNOT_RE.findall(value))
            if not knots:
                raise ValueError(f"scenario line {lineno}: no (t, beta) knots found")
        elif key == "beta_interp":
            kind = value
        else:
            raise ValueError(f"scenario line {lineno}: unknown key {key!r}")
    if knots is None:
        raise ValueError("scenario must define beta knots")
    params = replace(RateParams(), **overrides)
    if "X" not in initial:
        initial["X"] = params.N - sum(initial.get(k, 0.0) for k in ("L", "Y", "Z", "H", "D"))
    return Scenario(state_vector(**initial), params, BetaCurve(knots, kind))


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())
