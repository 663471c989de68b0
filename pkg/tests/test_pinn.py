import numpy as np
import pytest

from epipinn import nn
from epipinn.compartments import IDX, integrate_rk4
from epipinn.data import CHANNELS, Dataset, apply_scaling
from epipinn.errors import DivergedLoss, EmptyCollocation, EmptyWindow
from epipinn.pinn import (FitConfig, LossWeights, PinnProblem, TrainingWindow, collocation_points,
                          compartment_scales, data_loss, init_model, initial_loss, observables,
                          predict_point, residual_loss, residual_mean_square, scaled_residual,
                          total_loss, train)
from epipinn.synthetic import two_peak_scenario
from oracles import central_difference, gradient_mismatch

WINDOW = TrainingWindow(1, 8)
LINEAR9 = nn.MLPConfig(hidden_layers=0, output_dim=9)
TINY = nn.MLPConfig(hidden_layers=1, hidden_width=3, output_dim=3)


def linear_model(ds, slopes, intercepts=None, window=WINDOW):
    """Model whose state outputs are exactly ``u_i = slope_i * tau + intercept_i``."""
    m = init_model(ds, window, 0, state_cfg=LINEAR9, factor_cfg=TINY)
    ns = LINEAR9.n_params
    m.params[:ns] = np.concatenate([slopes, np.zeros(9) if intercepts is None else intercepts])
    return m


def fake_dataset(model, ds, window=WINDOW, shift=None, keep=None):
    """Dataset whose observations equal the model's observables (plus ``shift``)."""
    weeks = np.arange(window.first_week, window.last_week + 1)
    obs = observables(model, model.week_end_day(weeks))
    if shift is not None:
        obs = obs + shift
    if keep is not None:
        obs = np.where(keep, obs, np.nan)
    vals = np.column_stack([ds.scaling.denormalize(ch, obs[:, j]) for j, ch in enumerate(CHANNELS)])
    return apply_scaling(Dataset(weeks, vals), ds.scaling)


def test_window_validation():
    with pytest.raises(EmptyWindow):
        TrainingWindow(5, 7)
    with pytest.raises(ValueError):
        TrainingWindow(1, 10, horizons=(0, 1))
    assert TrainingWindow(1, 17).span_days == 119


def test_collocation_density():
    pts = collocation_points(TrainingWindow(1, 17))
    assert len(pts) == 85 and pts[0] == 0 and pts[-1] == 119
    with pytest.raises(EmptyCollocation):
        collocation_points(WINDOW, 0)


def test_compartment_scales_positive(synth60):
    sc = two_peak_scenario()
    off, s, flow = compartment_scales(synth60.scaling, sc.params, 119)
    assert off[IDX["X"]] == sc.params.N and s[IDX["X"]] < 0
    assert np.all(np.delete(s, IDX["X"]) > 0) and np.all(flow > 0)


def test_observables_constant_counter_gives_zero(synth60):
    m = linear_model(synth60, np.zeros(9), np.full(9, 0.3))
    assert np.all(m.weekly_counts([14.0, 21.0]) == 0)
    obs = observables(m, 14.0)
    assert obs[0] == synth60.scaling.normalize("cases", 0.0)


def test_observables_linear_counter(synth60):
    slopes = np.zeros(9)
    slopes[IDX["Z_r"]] = 0.4
    m = linear_model(synth60, slopes)
    per_day = m.state_scale[IDX["Z_r"]] * 0.4 / m.span_days
    assert m.weekly_counts(21.0)[0, 0] == pytest.approx(7 * per_day, rel=1e-12)


def test_beta_and_probabilities_in_range(synth60, rng):
    m = init_model(synth60, WINDOW, 5)
    m.params = m.params + rng.normal(0, 5, m.params.size)
    assert np.all(m.beta(np.linspace(-50, 500, 1001)) >= 0)
    assert 0 < m.p_h < 1 and 0 < m.p_d < 1


def test_init_is_seeded(synth60):
    a, b = init_model(synth60, WINDOW, 3), init_model(synth60, WINDOW, 3)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, init_model(synth60, WINDOW, 4).params)


# losses ------------------------------------------------------------------------

def test_data_loss_zero_on_perfect_fit(synth60, rng):
    m = linear_model(synth60, rng.uniform(0.1, 1, 9))
    ds = fake_dataset(m, synth60)
    assert data_loss(m, ds, WINDOW) < 1e-24
    assert initial_loss(m, ds, WINDOW) < 1e-24


def test_data_loss_single_term(synth60):
    m = linear_model(synth60, np.full(9, 0.5))
    keep = np.zeros((8, 5), bool)
    keep[3, 1] = True
    ds = fake_dataset(m, synth60, shift=0.5, keep=keep)
    assert data_loss(m, ds, WINDOW) == pytest.approx(0.25, rel=1e-12)


def test_data_loss_linear_in_channel_weights(synth60):
    m = init_model(synth60, WINDOW, 1)
    one = data_loss(m, synth60, WINDOW)
    two = data_loss(m, synth60, WINDOW, LossWeights(channel=(2.0,) * 5))
    assert two == pytest.approx(2 * one, rel=1e-14)


def test_data_loss_channel_means_with_missing(synth60, rng):
    m = linear_model(synth60, rng.uniform(0.1, 1, 9))
    keep = np.ones((8, 5), bool)
    keep[:5, 2] = False
    shift = np.zeros((8, 5))
    shift[:, 2] = 0.3
    shift[:, 0] = 0.1
    ds = fake_dataset(m, synth60, shift=shift, keep=keep)
    # each channel averages over its own present weeks
    assert data_loss(m, ds, WINDOW) == pytest.approx(0.09 + 0.01, rel=1e-9)


def test_initial_loss_examples(synth60, rng):
    m = linear_model(synth60, rng.uniform(0.1, 1, 9))
    shift = np.zeros((8, 5))
    shift[0, 3] = 1.0
    shift[1:] = rng.normal(0, 1, (7, 5))     # later weeks must not matter
    ds = fake_dataset(m, synth60, shift=shift)
    assert initial_loss(m, ds, WINDOW) == pytest.approx(0.2, rel=1e-12)


def test_empty_window(synth60):
    m = init_model(synth60, WINDOW, 0)
    with pytest.raises(EmptyWindow):
        PinnProblem(m, synth60, TrainingWindow(58, 64))
    with pytest.raises(EmptyCollocation):
        PinnProblem(m, synth60, WINDOW, collocation=[])


def rk4_truth(days, dt=0.01):
    sc = two_peak_scenario()
    t, S = integrate_rk4(sc.initial, sc.beta, sc.params, 0.0, days, dt)
    return sc, t, S


def test_residual_loss_small_on_exact_trajectory(synth60):
    sc, t, S = rk4_truth(119.0)
    dS = (S[2:] - S[:-2]) / (t[2:] - t[:-2])[:, None]
    _, _, flow = compartment_scales(synth60.scaling, sc.params, 119.0)
    idx = np.arange(1, len(t) - 1, 140)   # every 1.4 days
    f = scaled_residual(S[idx], dS[idx - 1], sc.beta(t[idx]), sc.params, flow)
    assert residual_mean_square(f) < 1e-4
    assert residual_mean_square(f, (0.0,) * 9) == 0.0


def test_residual_loss_quadratic_in_weights(synth60):
    m = init_model(synth60, WINDOW, 2)
    base = residual_loss(m, synth60, WINDOW)
    assert base > 0
    doubled = residual_loss(m, synth60, WINDOW, weights=LossWeights(equation=(2.0,) * 9))
    assert doubled == pytest.approx(4 * base, rel=1e-13)
    zero = residual_loss(m, synth60, WINDOW, weights=LossWeights(equation=(0.0,) * 9))
    assert zero == 0.0


def test_total_loss_composition(synth60):
    m = init_model(synth60, WINDOW, 2)
    prob = PinnProblem(m, synth60, WINDOW)
    total, parts = prob.evaluate(grad=False, parts=True)
    assert total == pytest.approx(parts["data"] + 0.1 * (parts["initial"] + parts["residual"]),
                                  rel=1e-15)
    nn_total = total_loss(m, synth60, WINDOW, LossWeights(w_ode=0.0))
    assert nn_total == data_loss(m, synth60, WINDOW)
    assert 0.5 + 0.1 * 1.0 == pytest.approx(0.6)


def test_total_loss_gradient(synth60, rng):
    from oracles import small_problem
    for _ in range(5):
        prob = small_problem(rng, synth60)
        p = prob.model.params
        _, g = prob.evaluate(p)
        fd = central_difference(lambda q: prob.evaluate(q, grad=False), p)
        assert gradient_mismatch(g, fd, rtol=1e-3) <= 1.0


# training and prediction ----------------------------------------------------------

def short_fit(epochs=200, seed=0, l2=1e-5):
    return FitConfig(train=nn.TrainConfig(epochs=epochs, l2_coefficient=l2, seed=seed))


def test_train_reduces_loss_and_is_deterministic(synth60):
    m1, h1 = train(synth60, WINDOW, short_fit(), seed=3)
    m2, h2 = train(synth60, WINDOW, short_fit(), seed=3)
    assert h1[-1] < h1[0]
    assert np.array_equal(h1, h2) and np.array_equal(m1.params, m2.params)
    assert predict_point(m1, 8) == predict_point(m2, 8)


def test_train_flags_divergence(synth60, monkeypatch):
    monkeypatch.setattr(PinnProblem, "evaluate", lambda self, p=None: (np.nan, np.zeros_like(p)))
    with pytest.raises(DivergedLoss) as exc:
        train(synth60, WINDOW, short_fit(5))
    assert exc.value.epoch == 0


def test_predict_point_counts_and_clamp(synth60):
    slopes = np.zeros(9)
    slopes[IDX["D_r"]] = -1.0      # shrinking cumulative deaths -> negative weekly deaths
    m = linear_model(synth60, slopes)
    out = predict_point(m, 8)
    assert len(out) == 12
    assert {(f.target, f.horizon) for f in out} == {(t, h) for t in ("cases", "deaths", "hosp")
                                                   for h in (1, 2, 3, 4)}
    assert all(f.value == 0.0 for f in out if f.target == "deaths")
    assert all(f.value >= 0 for f in out)
    assert out[0].target_week == 9
