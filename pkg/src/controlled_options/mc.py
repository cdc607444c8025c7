"""Monte Carlo policy evaluation under the risk-neutral measure.

``evaluate_policy`` prices one feedback policy: paths advance step by
step and the controlled state (x, y) = (accumulated payment, spent
weight) advances with the control sampled at the *left* endpoint of each
step, so u at t_i uses information up to t_i only and adaptedness holds
by construction.

In the budget mode the engine projects the policy onto the feasible set:
u is clipped to [d0, d1], forced to d1 once the remaining budget can
only just be spent at full rate, capped so the budget never overshoots,
and adjusted exactly on the final step.  Paths where the bounds make the
exact finish impossible are counted in ``meta["forced_ramp_warnings"]``.

Antithetic variates are on by default; estimates and standard errors are
computed on pair averages.  Paths stream through fixed-size blocks with
per-block substreams (see ``market``), and block partials reduce in
index order, so results do not depend on how work is chunked.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError
from .hjb import Policy
from .market import MarketParams, _block_normals
from .payoffs import DEGENERATE_WEIGHT, PayoffSpec, eval_f, eval_g, validate_spec
from .results import PriceEstimate

PAIR_BLOCK = 1 << 16
_FORCE_TOL = 1e-12


def _project_budget(u, y, t, dt, i, n_steps, d0, d1, t_horizon):
    """Feasibility projection for the unit-budget mode.  Returns (u, violations)."""
    u = np.clip(u, d0, d1)
    need = 1.0 - y
    force = need >= d1 * (t_horizon - t) - _FORCE_TOL
    u = np.where(force, d1, u)
    if i == n_steps - 1:
        u = need / dt
    else:
        u = np.minimum(u, need / dt)
    bad = int(np.count_nonzero((u > d1 + _FORCE_TOL) | (u < d0 - _FORCE_TOL)))
    return np.clip(u, max(d0, 0.0), d1), bad


def evaluate_policy(
    policy: Policy,
    spec: PayoffSpec,
    params: MarketParams,
    n_paths: int,
    n_steps: int,
    seed: int,
    antithetic: bool = True,
) -> PriceEstimate:
    """Discounted sample mean of the controlled payoff under ``policy``."""
    validate_spec(spec, params)
    if n_paths < 2:
        raise ParameterError("need at least two paths", field="n_paths")
    if n_steps < 1:
        raise ParameterError("need at least one step", field="n_steps")
    T = params.t_horizon
    dt = T / n_steps
    drift = (params.r - 0.5 * params.sigma**2) * dt
    vol = params.sigma * math.sqrt(dt)
    budget_mode = spec.weight_mode == "adapted_fixed_cumulative"
    d0, d1 = spec.bounds.d0, spec.bounds.d1
    signs = (1.0, -1.0) if antithetic else (1.0,)
    n_rows_total = (n_paths + 1) // 2 if antithetic else n_paths

    sum_w = 0.0
    sum_w2 = 0.0
    n_obs = 0
    warnings_count = 0
    disc = math.exp(-params.r * T)

    n_blocks = (n_rows_total + PAIR_BLOCK - 1) // PAIR_BLOCK
    for b in range(n_blocks):
        rows = min(PAIR_BLOCK, n_rows_total - b * PAIR_BLOCK)
        z = _block_normals(seed, b, (PAIR_BLOCK, n_steps))[:rows]
        payoffs = []
        for sign in signs:
            s = np.full(rows, params.s0)
            x = np.zeros(rows)
            y = np.zeros(rows)
            for i in range(n_steps):
                t = i * dt
                u = np.broadcast_to(
                    np.asarray(policy.evaluate(t, x, y, s), dtype=float), s.shape
                )
                if budget_mode:
                    u, bad = _project_budget(u, y, t, dt, i, n_steps, d0, d1, T)
                    warnings_count += bad
                else:
                    u = np.clip(u, d0, d1)
                f_now = eval_f(spec, params, s, t)
                x = x + u * f_now * dt
                y = y + u * dt
                s = s * np.exp(drift + vol * (sign * z[:, i]))
            if budget_mode:
                payoffs.append(eval_g(spec, x))
            else:
                terminal = eval_f(spec, params, s, T)
                ratio = np.where(y >= DEGENERATE_WEIGHT, x / np.where(y == 0.0, 1.0, y), terminal)
                payoffs.append(eval_g(spec, ratio))
        w = disc * (0.5 * (payoffs[0] + payoffs[1]) if antithetic else payoffs[0])
        sum_w += float(np.sum(w))
        sum_w2 += float(np.sum(w * w))
        n_obs += rows

    mean = sum_w / n_obs
    if n_obs > 1:
        var = max(sum_w2 - n_obs * mean * mean, 0.0) / (n_obs - 1)
        stderr = math.sqrt(var / n_obs)
    else:
        stderr = 0.0
    stderr = max(stderr, 1e-16 * (1.0 + abs(mean)))  # keep the stderr>0 contract
    return PriceEstimate(
        value=mean,
        stderr=stderr,
        method="monte_carlo",
        meta={
            "policy": policy.name,
            "n_paths": n_obs * len(signs),
            "n_steps": n_steps,
            "seed": seed,
            "antithetic": antithetic,
            "forced_ramp_warnings": warnings_count,
        },
    )


def price_terminal_payoff(
    spec: PayoffSpec,
    params: MarketParams,
    n_paths: int,
    n_steps: int,
    seed: int,
    antithetic: bool = True,
) -> PriceEstimate:
    """e^{-rT} E*[g(f(S(T), T))] on exactly the engine's path stream.

    This is the degenerate (all-zero weight) limit of the normalized
    payoff, evaluated directly; it reproduces ``evaluate_policy`` with a
    zero policy bit for bit, path for path.
    """
    T = params.t_horizon
    dt = T / n_steps
    drift = (params.r - 0.5 * params.sigma**2) * dt
    vol = params.sigma * math.sqrt(dt)
    signs = (1.0, -1.0) if antithetic else (1.0,)
    n_rows_total = (n_paths + 1) // 2 if antithetic else n_paths
    disc = math.exp(-params.r * T)

    sum_w = 0.0
    sum_w2 = 0.0
    n_obs = 0
    n_blocks = (n_rows_total + PAIR_BLOCK - 1) // PAIR_BLOCK
    for b in range(n_blocks):
        rows = min(PAIR_BLOCK, n_rows_total - b * PAIR_BLOCK)
        z = _block_normals(seed, b, (PAIR_BLOCK, n_steps))[:rows]
        payoffs = []
        for sign in signs:
            s = np.full(rows, params.s0)
            for i in range(n_steps):
                s = s * np.exp(drift + vol * (sign * z[:, i]))
            payoffs.append(eval_g(spec, eval_f(spec, params, s, T)))
        w = disc * (0.5 * (payoffs[0] + payoffs[1]) if antithetic else payoffs[0])
        sum_w += float(np.sum(w))
        sum_w2 += float(np.sum(w * w))
        n_obs += rows

    mean = sum_w / n_obs
    var = max(sum_w2 - n_obs * mean * mean, 0.0) / max(n_obs - 1, 1)
    stderr = max(math.sqrt(var / n_obs), 1e-16 * (1.0 + abs(mean)))
    return PriceEstimate(
        value=mean, stderr=stderr, method="monte_carlo",
        meta={"policy": "terminal_payoff", "n_paths": n_obs * len(signs),
              "n_steps": n_steps, "seed": seed, "antithetic": antithetic},
    )


def builtin_policies(spec: PayoffSpec, params: MarketParams) -> list[Policy]:
    """Reference policies: uniform, tail (when d0 = 0), a small threshold
    ladder on the payment rate, and the constant floor."""
    d0, d1 = spec.bounds.d0, spec.bounds.d1
    T = params.t_horizon
    out = []

    def _const(level, name):
        return Policy(
            source="analytic", d0=d0, d1=d1, name=name, t_horizon=T,
            fn=lambda t, x, y, s, level=level: np.full(np.shape(np.asarray(s)), level),
        )

    out.append(_const(1.0 / T, "uniform"))
    if d0 == 0.0:
        switch = max(T - 1.0 / d1, 0.0) if d1 > 0 else 0.0

        def tail_rule(t, x, y, s, switch=switch, level=d1):
            u = level if t >= switch else 0.0
            return np.full(np.shape(np.asarray(s)), u)

        out.append(Policy(source="analytic", d0=d0, d1=d1, name="tail",
                          fn=tail_rule, t_horizon=T, meta={"switch_time": switch}))
    for q in (-0.5, 0.0, 0.5):
        level = params.s0 * math.exp(params.sigma * math.sqrt(T) * q)
        c = float(eval_f(spec, params, level, 0.5 * T))

        def threshold_rule(t, x, y, s, c=c):
            f_now = eval_f(spec, params, np.asarray(s, dtype=float), t)
            return np.where(f_now > c, d1, d0)

        out.append(Policy(source="analytic", d0=d0, d1=d1, name=f"threshold[{q:+.1f}]",
                          fn=threshold_rule, t_horizon=T, meta={"cutoff": c}))
    out.append(_const(d0, "floor"))
    return out
