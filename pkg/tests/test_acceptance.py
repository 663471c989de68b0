"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``; the summary lines
are also repeated at the end of any pytest run that includes this module.
The synthetic backtest (criterion 4) is the long one, roughly 10-20
minutes on a single core.
"""

import os
import time

import numpy as np
import pytest

from epipinn import nn
from epipinn.backtest import BacktestConfig, rolling_backtest, score_backtest
from epipinn.compartments import integrate_rk4, state_vector
from epipinn.data import CHANNELS, load_raw_dir, preprocess, write_dataset
from epipinn.pinn import (FitConfig, LossWeights, PinnProblem, PointForecast, TrainingWindow,
                          compartment_scales, data_loss, init_model, observables, scaled_residual,
                          total_loss, train)
from epipinn.quantiles import (HUB_LEVELS, QuantileForecast, build_quantile_forecast,
                               causal_quantiles, gaussian_quantile, inverse_normal_cdf, normal_cdf)
from epipinn.scoring import WIS_ALPHAS, build_report, interval_score, wis
from epipinn.synthetic import synthetic_dataset, two_peak_scenario
from oracles import (bisect_normal_quantile, central_difference, gradient_mismatch, random_mlp,
                     reference_wis, small_problem)


def smooth_two_peak(t):
    return 0.2 + 0.13 * np.exp(-((t - 40) / 35) ** 2) + 0.14 * np.exp(-((t - 260) / 40) ** 2)


def test_c1_autodiff_exactness(gate, synth60):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_mlp = worst_loss = 0.0
    for _ in range(100):
        cfg, p = random_mlp(rng)
        t = float(rng.uniform(-1, 1))
        up = rng.standard_normal(cfg.output_dim)
        g = nn.grad_params(cfg, p, t, up)
        fd = central_difference(lambda q: float(up @ nn.forward(cfg, q, t)), p)
        worst_mlp = max(worst_mlp, gradient_mismatch(g, fd, rtol=1e-3))

        prob = small_problem(rng, synth60)
        params = prob.model.params
        _, g = prob.evaluate(params)
        fd = central_difference(lambda q: prob.evaluate(q, grad=False), params)
        worst_loss = max(worst_loss, gradient_mismatch(g, fd, rtol=1e-3))
    elapsed = time.perf_counter() - start
    ok = worst_mlp <= 1 and worst_loss <= 1 and elapsed < 60
    gate(1, ok, f"100 configs, worst error/tolerance grad_params {worst_mlp:.3g}, "
                f"total_loss {worst_loss:.3g}; {elapsed:.1f}s (< 60s)")
    assert ok


def test_c2_residual_oracle_and_rk4_order(gate, synth60):
    sc = two_peak_scenario()
    s0 = state_vector(X=sc.params.N - 6000, L=3000, Y=3000)
    t, S = integrate_rk4(s0, smooth_two_peak, sc.params, 0.0, 420.0, 0.01)
    dS = (S[2:] - S[:-2]) / (t[2:] - t[:-2])[:, None]
    _, _, flow = compartment_scales(synth60.scaling, sc.params, 420.0)
    f = scaled_residual(S[1:-1], dS, smooth_two_peak(t[1:-1]), sc.params, flow)
    max_f = float(np.abs(f).max())

    steps = np.array([0.8, 0.4, 0.2, 0.1])
    ref = integrate_rk4(s0, smooth_two_peak, sc.params, 0.0, 300.0, steps[-1] / 8)[1][-1]
    errs = [np.max(np.abs(integrate_rk4(s0, smooth_two_peak, sc.params, 0.0, 300.0, h)[1][-1] - ref)
                   / np.maximum(np.abs(ref), 1.0)) for h in steps]
    order = float(np.polyfit(np.log(steps), np.log(errs), 1)[0])
    ok = max_f < 1e-3 and 3.5 <= order <= 4.5
    gate(2, ok, f"max normalized |f| {max_f:.2e} (< 1e-3); RK4 order {order:.2f} (in [3.5, 4.5])")
    assert ok


def test_c3_synthetic_recovery(gate):
    ds = synthetic_dataset(n_weeks=60)
    window = TrainingWindow(1, 40)
    start = time.perf_counter()
    model, history = train(ds, window, FitConfig(train=nn.TrainConfig(epochs=5000)), seed=0)
    elapsed = time.perf_counter() - start
    weeks = np.arange(1, 41)
    pred = observables(model, model.week_end_day(weeks))
    errors = {}
    for j, ch in enumerate(CHANNELS):
        truth = ds.column(ch)[:40]
        fit = ds.scaling.denormalize(ch, pred[:, j])
        errors[ch] = float(np.linalg.norm(fit - truth) / np.linalg.norm(truth))
    ok = max(errors.values()) < 0.05 and elapsed < 300 and history[-1] <= history[0]
    detail = ", ".join(f"{ch} {100 * e:.2f}%" for ch, e in errors.items())
    gate(3, ok, f"relative L2 on weeks 1-40: {detail} (< 5%); {elapsed:.0f}s (< 300s)")
    assert ok


@pytest.mark.slow
def test_c4_synthetic_backtest_beats_naive(gate):
    ds = synthetic_dataset(n_weeks=60, noise=0.02, seed=7)
    workers = min(4, os.cpu_count() or 1)
    cfg = BacktestConfig(fit=FitConfig(train=nn.TrainConfig(epochs=5000)),
                         origins=(17, 56), workers=workers, seed=0)
    start = time.perf_counter()
    result = rolling_backtest(ds, cfg)
    elapsed = time.perf_counter() - start
    report, _ = score_backtest(ds, {"pinn": result.forecasts})
    mase = {t: report.get("pinn", t, 1).mase for t in ("cases", "deaths", "hosp")}
    ok = all(m < 1.0 for m in mase.values()) and elapsed < 1800 and not result.failed
    detail = ", ".join(f"{t} {m:.3f}" for t, m in mase.items())
    gate(4, ok, f"h1 MASE {detail} (< 1); 40 windows, {workers} worker(s), "
                f"{elapsed / 60:.1f} min (< 30)")
    assert ok


def test_c5_scoring_exactness(gate):
    rng = np.random.default_rng(5)
    worst_mass = 0.0
    for _ in range(1000):
        m, y = rng.uniform(-1e4, 1e4, 2)
        q = QuantileForecast("cases", 1, 1, m, 0.0, HUB_LEVELS, (m,) * 23)
        worst_mass = max(worst_mass, abs(wis(q, y) - abs(y - m)) / max(1.0, abs(y - m)))
    hand = [interval_score(1, 3, 0.2, 2), interval_score(1, 3, 0.2, 4), interval_score(1, 3, 0.5, 0)]
    hand_ok = hand[0] == 2 and abs(hand[1] - 12) < 1e-12 and hand[2] == 6
    worst_ref = 0.0
    for _ in range(20):
        mu, sigma, y = rng.uniform(0, 500), rng.uniform(0.5, 80), rng.uniform(0, 600)
        q = build_quantile_forecast(PointForecast("cases", 1, 1, mu), sigma)
        lows = [q.quantile(a / 2) for a in WIS_ALPHAS]
        ups = [q.quantile(1 - a / 2) for a in WIS_ALPHAS]
        ref = reference_wis(q.quantile(0.5), lows, ups, WIS_ALPHAS, y)
        worst_ref = max(worst_ref, abs(wis(q, y) - ref) / max(1.0, abs(ref)))
    ok = worst_mass <= 1e-12 and hand_ok and worst_ref <= 1e-9
    gate(5, ok, f"point-mass identity worst {worst_mass:.1e} (<= 1e-12); worked examples {hand}; "
                f"reference scorer worst {worst_ref:.1e} (<= 1e-9)")
    assert ok


def test_c6_quantile_math(gate):
    grid = np.linspace(1e-6, 1 - 1e-6, 10_000)
    worst_cdf = 0.0
    worst_z = 0.0
    for p in grid:
        z = inverse_normal_cdf(p)
        worst_cdf = max(worst_cdf, abs(normal_cdf(z) - p))
        worst_z = max(worst_z, abs(z - bisect_normal_quantile(p)))
    q975 = gaussian_quantile(0, 1, 0.975)
    ok = worst_cdf < 1e-9 and abs(q975 - 1.95996) <= 1e-4
    gate(6, ok, f"max |Phi(z) - p| {worst_cdf:.1e} over 10,000 points (< 1e-9), "
                f"max |z - bisection| {worst_z:.1e}; q(0.975) = {q975:.6f}")
    assert ok


def test_c7_naive_identities(gate):
    rng = np.random.default_rng(7)
    results = []
    for trial in range(5):
        n = int(rng.integers(15, 40))
        series = {t: rng.uniform(10, 1000, n) for t in ("cases", "deaths", "hosp")}

        def truth(t, w):
            return float(series[t][w - 1]) if 1 <= w <= n else float("nan")

        pts = [PointForecast(t, h, o, truth(t, o)) for t in series for h in (1, 2, 3, 4)
               for o in range(4, n)]
        naive = causal_quantiles(pts, truth)
        report = build_report({"naive": naive}, truth)
        results += [(c.mase, c.scaled_wis) for c in report.cells.values()]
    ok = all(m == 1.0 and s == 1.0 for m, s in results)
    gate(7, ok, f"naive vs naive over {len(results)} cells: MASE and scaled WIS all exactly 1.0")
    assert ok


def test_c8_ablation_identity_and_l2(gate, synth60):
    rng = np.random.default_rng(8)
    window = TrainingWindow(1, 17)
    bit_equal = True
    for seed in range(20):
        model = init_model(synth60, window, seed)
        model.params = model.params + rng.normal(0, 0.5, model.params.size)
        weights = LossWeights(w_ode=0.0, equation=tuple(rng.uniform(0, 3, 9)))
        bit_equal &= total_loss(model, synth60, window, weights) == data_loss(model, synth60, window)
        prob = PinnProblem(model, synth60, window, weights)
        bit_equal &= prob.evaluate(grad=False) == prob.evaluate(grad=False, parts=True)[1]["data"]
    norms = {}
    for l2 in (1e-3, 0.0):
        fit = FitConfig(train=nn.TrainConfig(epochs=1000, l2_coefficient=l2))
        model, _ = train(synth60, window, fit, seed=0)
        norms[l2] = float(np.linalg.norm(model.params))
    ok = bit_equal and norms[1e-3] < norms[0.0]
    gate(8, ok, f"w_ODE=0 total == data bitwise on 20 models: {bit_equal}; "
                f"param norm l2=1e-3 {norms[1e-3]:.3f} < l2=0 {norms[0.0]:.3f}")
    assert ok


def test_c9_preprocessing_golden(gate, fixtures_dir, tmp_path):
    ds, spec, summary = preprocess(load_raw_dir(fixtures_dir / "raw"))
    write_dataset(tmp_path / "dataset.csv", ds, spec)
    same = (tmp_path / "dataset.csv").read_bytes() == (fixtures_dir / "dataset.csv").read_bytes()
    same_side = (tmp_path / "dataset.scaling.csv").read_bytes() == \
        (fixtures_dir / "dataset.scaling.csv").read_bytes()
    rules = (ds.last_week == 110 and summary.truncated_weeks == 4
             and np.isnan(ds.column("hosp")[:20]).all() and not np.isnan(ds.column("hosp")[20:]).any())
    ok = same and same_side and rules
    gate(9, ok, f"dataset byte-identical {same}, scaling byte-identical {same_side}; "
                f"hosp starts week {summary.hosp_first_week}, {ds.n_weeks} weeks after truncation")
    assert ok
