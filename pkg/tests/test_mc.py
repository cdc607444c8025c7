import math

import numpy as np
import pytest

from controlled_options import (
    ControlBounds,
    MarketParams,
    PayoffSpec,
    Policy,
    TailStrategyConfig,
    builtin_policies,
    evaluate_policy,
    price_terminal_payoff,
    tail_strategy,
    tail_strategy_price,
)
from controlled_options.market import _block_normals
from controlled_options.mc import PAIR_BLOCK

PARAMS = MarketParams(s0=100.0, r=0.0, sigma=0.2, t_horizon=1.0)


def _spec(**kw):
    base = dict(f_kind="identity", g_kind="identity",
                weight_mode="adapted_fixed_cumulative", bounds=ControlBounds(0.0, 2.0))
    base.update(kw)
    return PayoffSpec(**base)


def _policies_by_name(spec, params):
    return {p.name: p for p in builtin_policies(spec, params)}


def test_martingale_identity_for_three_policies():
    # adapted weights integrating to one spend a martingale: the price is spot
    spec = _spec()
    pols = _policies_by_name(spec, PARAMS)
    for name in ("uniform", "tail", "threshold[+0.0]"):
        est = evaluate_policy(pols[name], spec, PARAMS, n_paths=60_000, n_steps=200, seed=31)
        assert abs(est.value - 100.0) <= 3.0 * est.stderr, (name, est.value, est.stderr)
        assert est.meta["forced_ramp_warnings"] == 0


def test_seed_determinism():
    spec = _spec(f_kind="call", f_strike=100.0)
    pol = _policies_by_name(spec, PARAMS)["tail"]
    a = evaluate_policy(pol, spec, PARAMS, 20_000, 100, seed=7)
    b = evaluate_policy(pol, spec, PARAMS, 20_000, 100, seed=7)
    assert a.value == b.value and a.stderr == b.stderr


def test_singleton_control_matches_direct_evaluation():
    t_horizon = 1.0
    n_steps = 128
    n_rows = 4096
    spec = _spec(f_kind="call", f_strike=100.0, bounds=ControlBounds(1.0, 1.0))
    pol = Policy(source="analytic", d0=1.0, d1=1.0, name="const",
                 fn=lambda t, x, y, s: np.full(np.shape(s), 1.0), t_horizon=t_horizon)
    est = evaluate_policy(pol, spec, PARAMS, n_paths=2 * n_rows, n_steps=n_steps,
                          seed=13, antithetic=True)

    # independent straight-loop evaluation on the same substream
    dt = t_horizon / n_steps
    drift = (PARAMS.r - 0.5 * PARAMS.sigma**2) * dt
    vol = PARAMS.sigma * math.sqrt(dt)
    z = _block_normals(13, 0, (PAIR_BLOCK, n_steps))[:n_rows]
    acc = []
    for sign in (1.0, -1.0):
        s = np.full(n_rows, 100.0)
        x = np.zeros(n_rows)
        for i in range(n_steps):
            x = x + 1.0 * np.maximum(s - 100.0, 0.0) * dt
            s = s * np.exp(drift + vol * sign * z[:, i])
        acc.append(x)
    expected = float(np.mean(0.5 * (acc[0] + acc[1])))
    assert est.value == pytest.approx(expected, abs=1e-10)


def test_tail_policy_reproduces_quadrature_price():
    spec = _spec(f_kind="call", f_strike=100.0, payment_timing="terminal_compounded")
    cfg = TailStrategyConfig(params=PARAMS, cap=2.0, h_kind="call", strike=100.0)
    target = tail_strategy_price(cfg).value
    est = evaluate_policy(tail_strategy(cfg), spec, PARAMS, 200_000, 400, seed=5)
    assert abs(est.value - target) <= 3.0 * est.stderr


def test_step_refinement_stability():
    spec = _spec(f_kind="call", f_strike=100.0)
    pol = _policies_by_name(spec, PARAMS)["tail"]
    a = evaluate_policy(pol, spec, PARAMS, 100_000, 200, seed=2)
    b = evaluate_policy(pol, spec, PARAMS, 100_000, 400, seed=2)
    assert abs(a.value - b.value) <= 3.0 * math.hypot(a.stderr, b.stderr) + 0.02


def test_normalized_zero_policy_hits_terminal_branch_exactly():
    spec = _spec(weight_mode="normalized", f_kind="call", f_strike=100.0)
    zero = Policy(source="analytic", d0=0.0, d1=2.0, name="zero",
                  fn=lambda t, x, y, s: np.zeros(np.shape(s)), t_horizon=1.0)
    a = evaluate_policy(zero, spec, PARAMS, 40_000, 64, seed=21)
    b = price_terminal_payoff(spec, PARAMS, 40_000, 64, seed=21)
    assert abs(a.value - b.value) <= 1e-12


def test_builtin_policy_structure():
    spec = _spec(f_kind="call", f_strike=100.0)
    pols = _policies_by_name(spec, PARAMS)
    assert {"uniform", "tail", "floor"}.issubset(pols.keys())
    # uniform weight integrates to exactly one
    assert float(pols["uniform"].evaluate(0.3, 0.0, 0.0, 100.0)) * 1.0 == pytest.approx(1.0)
    # threshold policies are bang-bang before projection
    for name, pol in pols.items():
        if name.startswith("threshold"):
            u = pol.evaluate(0.25, 0.0, 0.0, np.array([60.0, 100.0, 180.0]))
            assert set(np.unique(u)).issubset({0.0, 2.0})
    # tail is only offered with a zero floor
    lifted = _spec(bounds=ControlBounds(0.25, 2.0))
    assert "tail" not in _policies_by_name(lifted, PARAMS)


def test_budget_projection_forces_exact_budget():
    # a policy that ignores the budget entirely still lands on int u = 1
    spec = _spec()
    wild = Policy(source="analytic", d0=0.0, d1=2.0, name="wild",
                  fn=lambda t, x, y, s: np.where(np.asarray(s) > 100.0, 2.0, 0.0),
                  t_horizon=1.0)
    n_rows, n_steps = 512, 100
    dt = 1.0 / n_steps
    z = _block_normals(3, 0, (PAIR_BLOCK, n_steps))[:n_rows]
    s = np.full(n_rows, 100.0)
    x = np.zeros(n_rows)
    y = np.zeros(n_rows)
    from controlled_options.mc import _project_budget

    drift = -0.5 * PARAMS.sigma**2 * dt
    vol = PARAMS.sigma * math.sqrt(dt)
    for i in range(n_steps):
        t = i * dt
        u = np.asarray(wild.evaluate(t, x, y, s), dtype=float)
        u, _ = _project_budget(u, y, t, dt, i, n_steps, 0.0, 2.0, 1.0)
        assert np.all(u <= 2.0 + 1e-12) and np.all(u >= -1e-15)
        y = y + u * dt
        s = s * np.exp(drift + vol * z[:, i])
    assert np.allclose(y, 1.0, atol=1e-9)


def test_antithetic_reduces_stderr_for_monotone_payoff():
    spec = _spec(f_kind="call", f_strike=100.0)
    pol = _policies_by_name(spec, PARAMS)["uniform"]
    anti = evaluate_policy(pol, spec, PARAMS, 40_000, 100, seed=9, antithetic=True)
    plain = evaluate_policy(pol, spec, PARAMS, 40_000, 100, seed=9, antithetic=False)
    assert anti.stderr < plain.stderr


def test_estimates_carry_positive_stderr_and_meta():
    spec = _spec()
    pol = _policies_by_name(spec, PARAMS)["uniform"]
    est = evaluate_policy(pol, spec, PARAMS, 10_000, 50, seed=1)
    assert est.stderr > 0.0
    assert est.method == "monte_carlo"
    assert est.meta["n_paths"] == 10_000
    assert est.meta["seed"] == 1
