"""Physics-informed forecaster: two subnets, composite loss, training, prediction.

Model time is in days, with day 0 at the start of the window's first week,
so week ``k`` of the dataset ends on day ``7 * (k - first_week + 1)``. Both
subnets see ``tau = t / span_days`` so the training span maps to [0, 1].

The state subnet outputs the nine compartments in internal units. A
compartment value in persons is ``offset_i + scale_i * u_i``; the scales
are derived from the peak weekly counts of the target channels so that
every output is O(1) (see :func:`compartment_scales`). Weekly reported
cases, deaths and hospital admissions are 7-day differences of the
cumulative counters ``Z_r``, ``D_r`` and ``A``.

The factor subnet outputs (mobility, vaccines, raw transmission);
``beta = softplus(raw + softplus^-1(gamma))`` so an untrained network starts
near the replacement transmission level. ``p_h`` and ``p_d`` are sigmoids of
two trainable scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .compartments import IDX, RateParams, rhs, rhs_vjp
from .data import CHANNELS, TARGETS, Dataset, ScalingSpec
from .errors import DimensionMismatch, DivergedLoss, EmptyCollocation, EmptyWindow

N_STATE = 9
# weekly target channel -> cumulative compartment it differences
TARGET_COUNTER = {"cases": IDX["Z_r"], "deaths": IDX["D_r"], "hosp": IDX["A"]}
_COUNTER_COLS = [TARGET_COUNTER[t] for t in TARGETS]


@dataclass(frozen=True)
class LossWeights:
    w_ode: float = 0.1
    equation: tuple = (1.0,) * N_STATE
    channel: tuple = (1.0,) * len(CHANNELS)

    def __post_init__(self):
        if len(self.equation) != N_STATE or len(self.channel) != len(CHANNELS):
            raise DimensionMismatch("need 9 equation weights and 5 channel weights")
        if self.w_ode < 0 or min(self.equation) < 0 or min(self.channel) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainingWindow:
    first_week: int
    last_week: int
    horizons: tuple = (1, 2, 3, 4)

    def __post_init__(self):
        if self.last_week < self.first_week + 3:
            raise EmptyWindow(
                f"window {self.first_week}..{self.last_week} needs at least 4 weeks")
        if not self.horizons or any(h < 1 or h > 4 for h in self.horizons):
            raise ValueError("horizons must lie in 1..4")

    @property
    def n_weeks(self) -> int:
        return self.last_week - self.first_week + 1

    @property
    def span_days(self) -> float:
        return 7.0 * self.n_weeks


@dataclass(frozen=True)
class PointForecast:
    target: str
    horizon: int
    origin_week: int
    value: float

    @property
    def target_week(self) -> int:
        return self.origin_week + self.horizon


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    return float(np.log(p / (1.0 - p)))


def compartment_scales(scaling: ScalingSpec, rates: RateParams, span_days: float):
    """Per-compartment ``(offset, scale, flow)`` arrays in persons.

    With ``C``, ``Hd`` and ``Dd`` the peak daily reported cases, admissions
    and deaths: infectious and latent pools scale with ``C / (rho gamma)``,
    pending reports with ``C / gamma_z``, hospital census with
    ``Hd / gamma_h``, unreported deaths with ``Dd / gamma_d``, and the
    cumulative counters with peak daily flow times the span. Susceptibles
    are ``N`` minus a multiple of the span's maximum infections.

    ``flow`` is the characteristic daily flow of each equation, used to put
    the nine residuals on a common footing.
    """
    def peak_daily(ch):
        return max((scaling.offset[ch] + scaling.scale[ch]) / 7.0, 1e-9)

    C, Hd, Dd = peak_daily("cases"), peak_daily("hosp"), peak_daily("deaths")
    T = span_days
    s = np.empty(N_STATE)
    s[IDX["Y"]] = C / (rates.rho * rates.gamma)
    s[IDX["L"]] = s[IDX["Y"]] * rates.gamma / rates.eta
    s[IDX["X"]] = -C * T / rates.rho
    s[IDX["Z"]] = C / rates.gamma_z
    s[IDX["Z_r"]] = C * T
    s[IDX["H"]] = Hd / rates.gamma_h
    s[IDX["A"]] = Hd * T
    s[IDX["D"]] = Dd / rates.gamma_d
    s[IDX["D_r"]] = Dd * T
    offset = np.zeros(N_STATE)
    offset[IDX["X"]] = rates.N
    flow = np.empty(N_STATE)
    flow[IDX["X"]] = C / rates.rho
    flow[IDX["L"]] = rates.eta * s[IDX["L"]]
    flow[IDX["Y"]] = rates.gamma * s[IDX["Y"]]
    flow[IDX["Z"]] = C
    flow[IDX["Z_r"]] = C
    flow[IDX["H"]] = Hd
    flow[IDX["A"]] = Hd
    flow[IDX["D"]] = Dd
    flow[IDX["D_r"]] = Dd
    return offset, s, flow


def scaled_residual(states, dstates, beta, rates: RateParams, flow_scale,
                    p_h: float | None = None, p_d: float | None = None) -> np.ndarray:
    """ODE residuals in persons/day divided by each equation's characteristic flow.

    ``states`` and ``dstates`` have shape (B, 9); ``beta`` has shape (B,).
    """
    return (np.asarray(dstates) - rhs(np.asarray(states), beta, rates, p_h, p_d)) / flow_scale


def residual_mean_square(f, equation_weights=(1.0,) * N_STATE) -> float:
    """Mean over points of ``(1/9) * sum_i (w_i f_i)^2``."""
    f = np.atleast_2d(f)
    if f.shape[0] == 0:
        raise EmptyCollocation("no residual points")
    wf = np.asarray(equation_weights, dtype=float) * f
    return float(np.sum(wf * wf) / (N_STATE * f.shape[0]))


@dataclass
class PinnModel:
    state_cfg: nn.MLPConfig
    factor_cfg: nn.MLPConfig
    params: np.ndarray
    rates: RateParams
    scaling: ScalingSpec
    first_week: int
    span_days: float
    state_offset: np.ndarray = field(repr=False, default=None)
    state_scale: np.ndarray = field(repr=False, default=None)
    flow_scale: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.state_scale is None:
            self.state_offset, self.state_scale, self.flow_scale = compartment_scales(
                self.scaling, self.rates, self.span_days)
        expected = self.state_cfg.n_params + self.factor_cfg.n_params + 2
        if self.params.shape != (expected,):
            raise DimensionMismatch(f"expected {expected} parameters, got {self.params.shape}")

    @property
    def beta_shift(self) -> float:
        g = self.rates.gamma
        return float(np.log(np.expm1(g))) if g > 0 else 0.0

    def split(self, params=None):
        p = self.params if params is None else params
        ns, nf = self.state_cfg.n_params, self.factor_cfg.n_params
        return p[:ns], p[ns:ns + nf], p[ns + nf], p[ns + nf + 1]

    @property
    def p_h(self) -> float:
        return float(_sigmoid(self.split()[2]))

    @property
    def p_d(self) -> float:
        return float(_sigmoid(self.split()[3]))

    def week_end_day(self, week) -> np.ndarray:
        return 7.0 * (np.asarray(week, dtype=float) - self.first_week + 1)

    def tau(self, t_days):
        return np.asarray(t_days, dtype=float) / self.span_days

    def state_units(self, t_days):
        """Raw state subnet outputs ``u`` at model days ``t`` (shape (B, 9))."""
        sp = self.split()[0]
        return np.atleast_2d(nn.forward(self.state_cfg, sp, np.atleast_1d(self.tau(t_days))))

    def states(self, t_days) -> np.ndarray:
        """Compartments in persons, shape (B, 9)."""
        return self.state_offset + self.state_scale * self.state_units(t_days)

    def factors(self, t_days) -> np.ndarray:
        fp = self.split()[1]
        return np.atleast_2d(nn.forward(self.factor_cfg, fp, np.atleast_1d(self.tau(t_days))))

    def beta(self, t_days) -> np.ndarray:
        return _softplus(self.factors(t_days)[:, 2] + self.beta_shift)

    def weekly_counts(self, t_days) -> np.ndarray:
        """Reported cases, deaths, admissions (persons) over the 7 days ending at ``t``."""
        t = np.atleast_1d(np.asarray(t_days, dtype=float))
        u_now = self.state_units(t)[:, _COUNTER_COLS]
        u_before = self.state_units(t - 7.0)[:, _COUNTER_COLS]
        return self.state_scale[_COUNTER_COLS] * (u_now - u_before)


def observables(model: PinnModel, t_days) -> np.ndarray:
    """Normalized (cases, deaths, hosp, mobility, vaccines) at model days ``t``.

    Scalar ``t`` gives a 5-vector, an array gives shape (B, 5).
    """
    scalar = np.ndim(t_days) == 0
    t = np.atleast_1d(np.asarray(t_days, dtype=float))
    counts = model.weekly_counts(t)
    out = np.empty((len(t), len(CHANNELS)))
    for j, ch in enumerate(TARGETS):
        out[:, j] = model.scaling.normalize(ch, counts[:, j])
    out[:, 3:] = model.factors(t)[:, :2]
    return out[0] if scalar else out


def init_model(dataset: Dataset, window: TrainingWindow, seed: int,
               rates: RateParams | None = None,
               state_cfg: nn.MLPConfig | None = None,
               factor_cfg: nn.MLPConfig | None = None) -> PinnModel:
    """Fresh model for ``window``; weights from :func:`nn.init_params`.

    ``p_h`` and ``p_d`` start at the ratios implied by the peak channel
    levels (``rho * Hd / C`` and ``Dd / Hd``), clipped to [1e-4, 0.9].
    """
    if dataset.scaling is None:
        raise ValueError("dataset must be normalized before training")
    rates = RateParams() if rates is None else rates
    state_cfg = nn.MLPConfig(output_dim=9) if state_cfg is None else state_cfg
    factor_cfg = nn.MLPConfig(output_dim=3) if factor_cfg is None else factor_cfg
    s1, s2 = np.random.SeedSequence(seed).generate_state(2)
    sc = dataset.scaling

    def peak(ch):
        return max(sc.offset[ch] + sc.scale[ch], 1e-9)

    p_h0 = np.clip(rates.rho * peak("hosp") / peak("cases"), 1e-4, 0.9)
    p_d0 = np.clip(peak("deaths") / peak("hosp"), 1e-4, 0.9)
    params = np.concatenate([
        nn.init_params(state_cfg, int(s1)),
        nn.init_params(factor_cfg, int(s2)),
        [_logit(p_h0), _logit(p_d0)],
    ])
    return PinnModel(state_cfg, factor_cfg, params, rates, sc,
                     window.first_week, window.span_days)


def collocation_points(window: TrainingWindow, per_week: int = 5) -> np.ndarray:
    """``per_week`` points per training week, evenly spaced over the span (days)."""
    n = per_week * window.n_weeks
    if n < 1:
        raise EmptyCollocation("no collocation points")
    return np.linspace(0.0, window.span_days, n)


class PinnProblem:
    """Loss terms and exact parameter gradients for one training window.

    All network evaluations for a step happen in one batch: the ``n + 1``
    week boundaries of the window followed by the collocation points.
    """

    def __init__(self, model: PinnModel, dataset: Dataset, window: TrainingWindow,
                 weights: LossWeights | None = None, collocation=None):
        if dataset.normalized is None:
            raise ValueError("dataset must be normalized")
        if window.first_week < dataset.first_week or window.last_week > dataset.last_week:
            raise EmptyWindow(f"window {window.first_week}..{window.last_week} "
                              f"outside dataset weeks {dataset.first_week}..{dataset.last_week}")
        self.model = model
        self.weights = LossWeights() if weights is None else weights
        self.window = window
        sub = dataset.slice_weeks(window.first_week, window.last_week)
        self.targets = sub.normalized
        self.mask = ~np.isnan(self.targets)
        if not self.mask.any():
            raise EmptyWindow("window has no observations")
        self.n = window.n_weeks
        nodes = 7.0 * np.arange(self.n + 1)
        coll = collocation_points(window) if collocation is None else np.asarray(collocation, float)
        if coll.size == 0:
            raise EmptyCollocation("collocation list is empty")
        self.collocation = coll
        self.times = np.concatenate([nodes, coll])
        self.tau = model.tau(self.times)
        counts = self.mask.sum(axis=0)
        w = np.asarray(self.weights.channel, dtype=float)
        # per-channel mean of squared errors over that channel's present weeks
        self.sq_weight = np.where(self.mask, w / np.maximum(counts, 1), 0.0)
        first = self.mask[0]
        self.init_weight = np.where(first, 1.0 / max(first.sum(), 1), 0.0)
        self._targets0 = np.where(self.mask, self.targets, 0.0)

    def evaluate(self, params=None, grad: bool = True, parts: bool = False):
        """Total loss, optionally with its gradient and the component values."""
        m = self.model
        params = m.params if params is None else params
        sp, fp, ph_raw, pd_raw = m.split(params)
        U, dU, cu = nn.forward_dual(m.state_cfg, sp, self.tau)
        V, _, cv = nn.forward_dual(m.factor_cfg, fp, self.tau)
        n = self.n
        gU = np.zeros_like(U)
        gdU = np.zeros_like(dU)
        gV = np.zeros_like(V)

        # data misfit at week boundaries
        cum = U[:n + 1, _COUNTER_COLS]
        obs = np.empty((n, len(CHANNELS)))
        counter_scale = m.state_scale[_COUNTER_COLS]
        ch_off = np.array([m.scaling.offset[c] for c in TARGETS])
        ch_scale = np.array([m.scaling.scale[c] for c in TARGETS])
        obs[:, :3] = (counter_scale * np.diff(cum, axis=0) - ch_off) / ch_scale
        obs[:, 3:] = V[1:n + 1, :2]
        err = np.where(self.mask, obs - self._targets0, 0.0)
        data = float(np.sum(self.sq_weight * err * err))
        g_obs = 2.0 * self.sq_weight * err

        w_ode = self.weights.w_ode
        initial = residual = 0.0
        g_ph = g_pd = 0.0
        if w_ode != 0.0 or parts:
            initial = float(np.sum(self.init_weight * err[0] ** 2))
            g_obs[0] += w_ode * 2.0 * self.init_weight * err[0]
            residual, g_ph, g_pd = self._residual(U, dU, V, ph_raw, pd_raw, gU, gdU, gV, w_ode)

        gcounts = g_obs[:, :3] * counter_scale / ch_scale
        gU[1:n + 1, _COUNTER_COLS] += gcounts
        gU[:n, _COUNTER_COLS] -= gcounts
        gV[1:n + 1, :2] += g_obs[:, 3:]

        total = data + w_ode * (initial + residual) if w_ode != 0.0 else data
        if not grad:
            return (total, {"data": data, "initial": initial, "residual": residual}) if parts else total
        g = np.concatenate([
            nn.backward_dual(m.state_cfg, sp, cu, gU, gdU),
            nn.backward_dual(m.factor_cfg, fp, cv, gV, np.zeros_like(V)),
            [g_ph, g_pd],
        ])
        if parts:
            return total, g, {"data": data, "initial": initial, "residual": residual}
        return total, g

    def _residual(self, U, dU, V, ph_raw, pd_raw, gU, gdU, gV, w_ode):
        m = self.model
        r = slice(self.n + 1, None)
        T = m.span_days
        S = m.state_offset + m.state_scale * U[r]
        dS = m.state_scale * dU[r] / T
        z = V[r, 2] + m.beta_shift
        beta = _softplus(z)
        p_h, p_d = _sigmoid(ph_raw), _sigmoid(pd_raw)
        f = scaled_residual(S, dS, beta, m.rates, m.flow_scale, p_h, p_d)
        w = np.asarray(self.weights.equation, dtype=float)
        M = f.shape[0]
        wf = w * f
        value = float(np.sum(wf * wf) / (N_STATE * M))
        if w_ode == 0.0:
            return value, 0.0, 0.0
        g_f = w_ode * 2.0 * w * wf / (N_STATE * M)
        gdU[r] += g_f * m.state_scale / (T * m.flow_scale)
        gS, g_beta, g_ph, g_pd = rhs_vjp(S, beta, m.rates, -g_f / m.flow_scale, p_h, p_d)
        gU[r] += gS * m.state_scale
        gV[r, 2] += g_beta * _sigmoid(z)
        return value, g_ph * p_h * (1 - p_h), g_pd * p_d * (1 - p_d)


def data_loss(model: PinnModel, dataset: Dataset, window: TrainingWindow,
              weights: LossWeights | None = None) -> float:
    """Per-channel mean squared misfit, summed over channels with their weights."""
    prob = PinnProblem(model, dataset, window, weights)
    return prob.evaluate(grad=False, parts=True)[1]["data"]


def initial_loss(model: PinnModel, dataset: Dataset, window: TrainingWindow) -> float:
    prob = PinnProblem(model, dataset, window)
    return prob.evaluate(grad=False, parts=True)[1]["initial"]


def residual_loss(model: PinnModel, dataset: Dataset, window: TrainingWindow,
                  collocation=None, weights: LossWeights | None = None) -> float:
    prob = PinnProblem(model, dataset, window, weights, collocation)
    return prob.evaluate(grad=False, parts=True)[1]["residual"]


def total_loss(model: PinnModel, dataset: Dataset, window: TrainingWindow,
               weights: LossWeights | None = None, collocation=None) -> float:
    """``data + w_ode * (initial + residual)``."""
    return PinnProblem(model, dataset, window, weights, collocation).evaluate(grad=False)


@dataclass(frozen=True)
class FitConfig:
    """Everything that shapes one window's training run."""
    train: nn.TrainConfig = nn.TrainConfig()
    weights: LossWeights = LossWeights()
    collocation_per_week: int = 5
    rates: RateParams = RateParams()
    state_net: nn.MLPConfig = nn.MLPConfig(output_dim=9)
    factor_net: nn.MLPConfig = nn.MLPConfig(output_dim=3)


def train(dataset: Dataset, window: TrainingWindow, config: FitConfig | None = None,
          seed: int | None = None, callback=None):
    """Full-batch Adam on the total loss.

    Returns ``(model, loss_history)``; the history holds the total loss
    (without the L2 term) before each update. Raises :class:`DivergedLoss`
    on a non-finite loss.
    """
    config = FitConfig() if config is None else config
    seed = config.train.seed if seed is None else seed
    model = init_model(dataset, window, seed, config.rates, config.state_net, config.factor_net)
    problem = PinnProblem(model, dataset, window, config.weights,
                          collocation_points(window, config.collocation_per_week))
    params = model.params
    state = nn.AdamState.zeros(params.size)
    history = np.empty(config.train.epochs)
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.train.epochs):
            try:
                loss, g = problem.evaluate(params)
            except (FloatingPointError, ValueError) as exc:
                raise DivergedLoss(epoch, float("nan")) from exc
            if not (np.isfinite(loss) and np.all(np.isfinite(g))):
                raise DivergedLoss(epoch, loss)
            history[epoch] = loss
            params, state = nn.adam_step(params, g, state, config.train)
            if callback is not None:
                callback(epoch, loss)
    model.params = params
    return model, history


def predict_point(model: PinnModel, origin_week: int, horizons=(1, 2, 3, 4),
                  scaling: ScalingSpec | None = None) -> list[PointForecast]:
    """Weekly target forecasts in original units, clamped at zero."""
    scaling = model.scaling if scaling is None else scaling
    weeks = np.array([origin_week + h for h in horizons])
    obs = observables(model, model.week_end_day(weeks))
    out = []
    for j, target in enumerate(TARGETS):
        vals = scaling.denormalize(target, obs[:, j])
        for h, v in zip(horizons, vals):
            out.append(PointForecast(target, int(h), int(origin_week), max(float(v), 0.0)))
    return out


def with_params(model: PinnModel, params) -> PinnModel:
    return replace(model, params=np.asarray(params, dtype=float))
