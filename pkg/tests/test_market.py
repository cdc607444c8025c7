import math

import numpy as np
import pytest
from scipy.stats import norm

from controlled_options import (
    MarketParams,
    ParameterError,
    bs_expected_payoff,
    norm_cdf,
    simulate_paths,
)
from controlled_options.market import draw_normals


def _bs_call_reference(s0, K, r, sigma, t):
    """Independent route: erfc-free scipy CDF and the textbook formula."""
    st = sigma * math.sqrt(t)
    d1 = (math.log(s0 / K) + (r + 0.5 * sigma**2) * t) / st
    d2 = d1 - st
    return s0 * math.exp(r * t) * norm.cdf(d1) - K * norm.cdf(d2)


def test_norm_cdf_matches_erfc_to_1e9():
    xs = np.linspace(-8.0, 8.0, 20001)
    ref = np.array([0.5 * math.erfc(-x / math.sqrt(2)) for x in xs])
    ours = np.array([norm_cdf(x) for x in xs])
    assert np.max(np.abs(ours - ref)) <= 1e-9


def test_params_validation():
    with pytest.raises(ParameterError):
        MarketParams(s0=-1.0, r=0.0, sigma=0.2, t_horizon=1.0)
    with pytest.raises(ParameterError):
        MarketParams(s0=100.0, r=0.0, sigma=0.0, t_horizon=1.0)
    with pytest.raises(ParameterError):
        MarketParams(s0=100.0, r=-0.01, sigma=0.2, t_horizon=1.0)
    with pytest.raises(ParameterError):
        MarketParams(s0=100.0, r=0.0, sigma=0.2, t_horizon=0.0)


def test_degenerate_sigma_paths_constant():
    params = MarketParams(s0=100.0, r=0.0, sigma=1e-12, t_horizon=1.0)
    ps = simulate_paths(params, n_paths=64, n_steps=16, seed=3)
    assert np.allclose(ps.values, 100.0, atol=1e-8)
    assert np.all(ps.values[:, 0] == 100.0)


def test_terminal_mean_grows_at_rate_r():
    params = MarketParams(s0=100.0, r=0.05, sigma=0.2, t_horizon=1.0)
    ps = simulate_paths(params, n_paths=1_000_000, n_steps=4, seed=11)
    st = ps.values[:, -1]
    target = 100.0 * math.exp(0.05)
    se = st.std(ddof=1) / math.sqrt(st.size)
    assert abs(st.mean() - target) <= 3.0 * se


def test_seed_determinism_bit_identical():
    params = MarketParams(s0=50.0, r=0.02, sigma=0.3, t_horizon=2.0)
    a = simulate_paths(params, 512, 8, seed=42)
    b = simulate_paths(params, 512, 8, seed=42)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.times, b.times)


def test_path_prefix_stable_under_more_paths():
    z_small = draw_normals(9, 1000, 6)
    z_big = draw_normals(9, 10_000, 6)
    assert np.array_equal(z_big[:1000], z_small)


def test_bs_call_against_reference_and_mc():
    params = MarketParams(s0=100.0, r=0.0, sigma=0.2, t_horizon=1.0)
    val = bs_expected_payoff(params, "call", 1.0, strike=100.0)
    # frozen from the independent scipy-based formula
    assert val == pytest.approx(7.965567455405804, abs=1e-9)
    assert val == pytest.approx(_bs_call_reference(100, 100, 0.0, 0.2, 1.0), abs=1e-10)
    st = simulate_paths(params, 1_000_000, 1, seed=5).values[:, -1]
    payoff = np.maximum(st - 100.0, 0.0)
    se = payoff.std(ddof=1) / math.sqrt(payoff.size)
    assert abs(payoff.mean() - val) <= 3.0 * se


def test_bs_call_deterministic_limit():
    params = MarketParams(s0=110.0, r=0.0, sigma=1e-12, t_horizon=1.0)
    assert bs_expected_payoff(params, "call", 1.0, strike=100.0) == pytest.approx(10.0, abs=1e-9)


def test_bs_identity_is_forward():
    params = MarketParams(s0=87.5, r=0.0, sigma=0.4, t_horizon=1.0)
    assert bs_expected_payoff(params, "identity", 0.7) == pytest.approx(87.5, abs=1e-12)
    params2 = MarketParams(s0=87.5, r=0.03, sigma=0.4, t_horizon=1.0)
    assert bs_expected_payoff(params2, "identity", 0.7) == pytest.approx(87.5 * math.exp(0.021), rel=1e-12)


def test_bs_put_by_parity():
    params = MarketParams(s0=100.0, r=0.04, sigma=0.25, t_horizon=1.0)
    c = bs_expected_payoff(params, "call", 0.8, strike=95.0)
    q = bs_expected_payoff(params, "put", 0.8, strike=95.0)
    fwd = 100.0 * math.exp(0.04 * 0.8)
    assert c - q == pytest.approx(fwd - 95.0, rel=1e-12)


def test_bs_parameter_errors():
    params = MarketParams(s0=100.0, r=0.0, sigma=0.2, t_horizon=1.0)
    with pytest.raises(ParameterError):
        bs_expected_payoff(params, "call", 0.5, strike=-3.0)
    with pytest.raises(ParameterError):
        bs_expected_payoff(params, "call", 2.0, strike=100.0)
    with pytest.raises(ParameterError):
        bs_expected_payoff(params, "strangle", 0.5, strike=100.0)


def test_martingale_at_every_grid_time():
    params = MarketParams(s0=100.0, r=0.0, sigma=0.2, t_horizon=1.0)
    ps = simulate_paths(params, 100_000, 12, seed=17)
    for i in range(1, 13):
        col = ps.values[:, i]
        se = col.std(ddof=1) / math.sqrt(col.size)
        assert abs(col.mean() - 100.0) <= 4.0 * se


def test_call_present_value_increases_with_payment_time():
    # convex payoff + martingale: paying later is strictly worth more
    params = MarketParams(s0=100.0, r=0.07, sigma=0.2, t_horizon=1.0)
    times = [0.1, 0.3, 0.5, 0.8, 1.0]
    pv = [math.exp(-params.r * t) * bs_expected_payoff(params, "call", t, strike=100.0) for t in times]
    assert all(b > a for a, b in zip(pv, pv[1:]))


def test_call_bounds_random_parameters():
    rng = np.random.default_rng(123)
    for _ in range(200):
        s0 = float(rng.uniform(10.0, 200.0))
        k = float(rng.uniform(5.0, 300.0))
        r = float(rng.uniform(0.0, 0.1))
        sigma = float(rng.uniform(0.05, 0.8))
        t = float(rng.uniform(0.0, 2.0))
        params = MarketParams(s0=s0, r=r, sigma=sigma, t_horizon=2.0)
        c = bs_expected_payoff(params, "call", t, strike=k)
        fwd = s0 * math.exp(r * t)
        assert c >= max(fwd - k, 0.0) - 1e-9
        assert c <= fwd + 1e-9
