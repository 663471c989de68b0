import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epipinn.compartments import (CALIFORNIA_POPULATION, IDX, BetaCurve, RateParams,
                                  integrate_rk4, load_scenario, parse_scenario, residual, rhs,
                                  rhs_vjp, state_vector)
from epipinn.errors import InvalidSpan, NonFiniteError

P = RateParams()
nonneg = st.floats(0, 1e7, allow_nan=False)


def smooth_two_peak(t):
    return 0.2 + 0.13 * np.exp(-((t - 40) / 35) ** 2) + 0.14 * np.exp(-((t - 260) / 40) ** 2)


def test_defaults():
    assert P.N == CALIFORNIA_POPULATION == 39_512_223
    assert (P.eta, P.gamma, P.gamma_d, P.gamma_z, P.gamma_h, P.rho) == (0.25, 0.25, 0.1, 1, 0.1, 0.5)
    with pytest.raises(ValueError):
        RateParams(rho=1.5)
    with pytest.raises(ValueError):
        RateParams(N=0)


def test_rhs_no_flows():
    assert np.array_equal(rhs(state_vector(X=P.N), 0.0, P), np.zeros(9))


def test_rhs_first_equation():
    d = rhs(state_vector(X=P.N, Y=1), 0.5, P)
    assert d[IDX["X"]] == pytest.approx(-0.5, rel=1e-15)


def test_rhs_latent_outflow():
    d = rhs(state_vector(L=4), 0.0, P)
    expected = np.zeros(9)
    expected[IDX["L"]], expected[IDX["Y"]] = -1.0, 1.0
    assert np.array_equal(d, expected)


def test_rhs_hand_values():
    s = state_vector(X=1e6, L=10, Y=20, Z=5, H=8, D=2)
    d = rhs(s, 0.3, P, p_h=0.1, p_d=0.2)
    inf = 0.3 * 1e6 * 20 / P.N
    expected = [-inf, inf - 2.5, 2.5 - 5, 0.5 * 0.25 * 20 - 5, 5, 0.1 * 5 - 0.8, 0.5,
                0.2 * 0.1 * 8 - 0.2, 0.2]
    np.testing.assert_allclose(d, expected, rtol=1e-14)


def test_rhs_batched_matches_rows(rng):
    S = rng.uniform(0, 1e5, (6, 9))
    b = rng.uniform(0, 1, 6)
    batched = rhs(S, b, P)
    for i in range(6):
        np.testing.assert_array_equal(batched[i], rhs(S[i], b[i], P))


def test_rhs_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        rhs(state_vector(X=np.nan), 0.1, P)


def test_residual_identities(rng):
    s = rng.uniform(0, 1e4, 9)
    d = rhs(s, 0.2, P)
    assert np.array_equal(residual(s, d, 0.2, P), np.zeros(9))
    bump = d + np.eye(9)[0]
    np.testing.assert_allclose(residual(s, bump, 0.2, P), np.eye(9)[0], atol=1e-12)


def test_rhs_vjp_matches_finite_differences(rng):
    s = rng.uniform(1e3, 1e6, 9)
    c = rng.standard_normal(9)
    beta, ph, pd = 0.27, 0.04, 0.2
    g_s, g_b, g_ph, g_pd = rhs_vjp(s, beta, P, c, ph, pd)

    def f(s_, b_, ph_, pd_):
        return float(c @ rhs(s_, b_, P, ph_, pd_))

    for i in range(9):
        h = 1e-3 * s[i]
        e = np.eye(9)[i] * h
        fd = (f(s + e, beta, ph, pd) - f(s - e, beta, ph, pd)) / (2 * h)
        assert g_s[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)
    assert g_b == pytest.approx((f(s, beta + 1e-6, ph, pd) - f(s, beta - 1e-6, ph, pd)) / 2e-6, rel=1e-6)
    assert g_ph == pytest.approx((f(s, beta, ph + 1e-6, pd) - f(s, beta, ph - 1e-6, pd)) / 2e-6, rel=1e-6)
    assert g_pd == pytest.approx((f(s, beta, ph, pd + 1e-6) - f(s, beta, ph, pd - 1e-6)) / 2e-6, rel=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(nonneg, min_size=9, max_size=9), st.floats(0, 2))
def test_monotonicity_properties(values, beta):
    d = rhs(np.array(values), beta, P)
    assert d[IDX["X"]] <= 0
    assert d[IDX["X"]] + d[IDX["L"]] + d[IDX["Y"]] == pytest.approx(-P.gamma * values[IDX["Y"]],
                                                                     rel=1e-9, abs=1e-6)
    assert d[IDX["Z_r"]] >= 0 and d[IDX["A"]] >= 0 and d[IDX["D_r"]] >= 0


# integrator ----------------------------------------------------------------

def test_rk4_equilibrium():
    t, S = integrate_rk4(state_vector(X=P.N), lambda t: 0.0, P, 0.0, 50.0, 0.5)
    assert np.all(S == S[0])
    assert t[0] == 0.0 and t[-1] == 50.0


def test_rk4_exponential_decay():
    L0 = 1000.0
    t, S = integrate_rk4(state_vector(L=L0), lambda t: 0.0, P, 0.0, 10.0, 0.1)
    exact = L0 * math.exp(-P.eta * 10.0)
    assert S[-1, IDX["L"]] == pytest.approx(exact, rel=1e-6)


def test_rk4_shortens_last_step():
    t, _ = integrate_rk4(state_vector(L=1), lambda t: 0.0, P, 0.0, 1.0, 0.3)
    np.testing.assert_allclose(t, [0, 0.3, 0.6, 0.9, 1.0])


def test_rk4_errors():
    with pytest.raises(InvalidSpan):
        integrate_rk4(state_vector(), lambda t: 0.0, P, 1.0, 1.0, 0.1)
    with pytest.raises(InvalidSpan):
        integrate_rk4(state_vector(), lambda t: 0.0, P, 0.0, 1.0, 2.0)
    with pytest.raises(NonFiniteError), np.errstate(over="ignore", invalid="ignore"):
        integrate_rk4(state_vector(X=P.N, Y=1e6), lambda t: 1e300, P, 0.0, 10.0, 1.0)


def test_rk4_halving_step_gains_sixteen():
    s0 = state_vector(X=P.N - 6000, L=3000, Y=3000)
    ref = integrate_rk4(s0, smooth_two_peak, P, 0, 300, 0.2 / 8)[1][-1]
    errs = [np.max(np.abs(integrate_rk4(s0, smooth_two_peak, P, 0, 300, dt)[1][-1] - ref))
            for dt in (0.4, 0.2)]
    assert 10 < errs[0] / errs[1] < 25


def test_counters_monotone_along_trajectory():
    s0 = state_vector(X=P.N - 6000, L=3000, Y=3000)
    _, S = integrate_rk4(s0, smooth_two_peak, P, 0, 300, 0.5)
    for name in ("Z_r", "A", "D_r"):
        assert np.all(np.diff(S[:, IDX[name]]) >= 0)
    assert np.all(np.diff(S[:, IDX["X"]]) <= 0)


# scenarios -------------------------------------------------------------------

def test_beta_curve_linear_and_cosine():
    lin = BetaCurve(((0, 0.2), (10, 0.4)))
    assert lin(5) == pytest.approx(0.3)
    assert lin(-1) == 0.2 and lin(20) == 0.4
    cos = BetaCurve(((0, 0.2), (10, 0.4)), "cosine")
    assert cos(5) == pytest.approx(0.3) and cos(0) == 0.2 and cos(10) == 0.4
    assert cos(2) < lin(2)
    with pytest.raises(ValueError):
        BetaCurve(((1, 0.2), (1, 0.3)))
    with pytest.raises(ValueError):
        BetaCurve(((0, -0.1),))


def test_parse_scenario(tmp_path):
    text = """
    # comment
    L = 2000
    Y = 1000   # trailing comment
    gamma = 0.2
    beta = (0, 0.3) (50, 0.1)
    beta_interp = cosine
    """
    sc = parse_scenario(text)
    assert sc.params.gamma == 0.2 and sc.params.eta == 0.25
    assert sc.initial[IDX["X"]] == P.N - 3000
    assert sc.beta.kind == "cosine" and sc.beta(50) == pytest.approx(0.1)
    p = tmp_path / "s.txt"
    p.write_text(text)
    assert np.array_equal(load_scenario(p).initial, sc.initial)
    with pytest.raises(ValueError):
        parse_scenario("L = 1\n")
    with pytest.raises(ValueError):
        parse_scenario("beta = (0, 0.1)\nfoo = 3\n")
