"""Risk-neutral market model: GBM path simulation and Black-Scholes expectations.

The engine prices everything under the risk-neutral measure, so the model
carries no physical drift; log-price increments are exact,

    S(t_{i+1}) = S(t_i) * exp((r - sigma^2/2) dt + sigma sqrt(dt) Z_i),

which keeps the simulated marginals free of time-discretisation bias.

Normal draws come from a Philox counter-based generator keyed on
(seed, block index) with a fixed block size, so enlarging ``n_paths``
appends new blocks without reshuffling the draws of earlier paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

# Paths per substream block.  Fixed so that path i always consumes the same
# normals regardless of the total path count.
BLOCK_PATHS = 4096

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class MarketParams:
    """Constants of the risk-neutral GBM model.

    s0: spot price, r: risk-free rate, sigma: volatility,
    t_horizon: terminal time T.
    """

    s0: float
    r: float
    sigma: float
    t_horizon: float

    def __post_init__(self):
        if not self.s0 > 0.0:
            raise ParameterError("spot must be positive", field="s0")
        if not self.r >= 0.0:
            raise ParameterError("rate must be >= 0", field="r")
        if not self.sigma > 0.0:
            # sigma == 0 is rejected; near-deterministic tests use sigma = 1e-12.
            raise ParameterError("volatility must be strictly positive", field="sigma")
        if not self.t_horizon > 0.0:
            raise ParameterError("horizon must be positive", field="t_horizon")


@dataclass(frozen=True)
class PathSet:
    """Simulated paths on a shared time grid.

    ``values`` has shape (n_paths, n_times) with values[:, 0] == s0.
    """

    times: np.ndarray
    values: np.ndarray
    seed: int

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0.0):
            raise ParameterError("times must be strictly increasing", field="times")
        if self.values.ndim != 2 or self.values.shape[1] != self.times.shape[0]:
            raise ParameterError("values shape must be (n_paths, n_times)", field="values")
        if not np.all(self.values > 0.0):
            raise ParameterError("path values must be strictly positive", field="values")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]


def norm_cdf(x: float) -> float:
    """Standard normal CDF via the Hart double-precision rational approximation.

    Constant set from Hart (1968) as popularised by West; absolute error
    below 1e-14 on the real line (verified against erfc in the tests,
    which require <= 1e-9).
    """
    xabs = abs(x)
    if xabs > 37.0:
        tail = 0.0
    else:
        e = math.exp(-0.5 * xabs * xabs)
        if xabs < 7.07106781186547:
            num = 3.52624965998911e-02 * xabs + 0.700383064443688
            num = num * xabs + 6.37396220353165
            num = num * xabs + 33.912866078383
            num = num * xabs + 112.079291497871
            num = num * xabs + 221.213596169931
            num = num * xabs + 220.206867912376
            den = 8.83883476483184e-02 * xabs + 1.75566716318264
            den = den * xabs + 16.064177579207
            den = den * xabs + 86.7807322029461
            den = den * xabs + 296.564248779674
            den = den * xabs + 637.333633378831
            den = den * xabs + 793.826512519948
            den = den * xabs + 440.413735824752
            tail = e * num / den
        else:
            b = xabs + 0.65
            b = xabs + 4.0 / b
            b = xabs + 3.0 / b
            b = xabs + 2.0 / b
            b = xabs + 1.0 / b
            tail = e / (b * _SQRT_2PI)
    return 1.0 - tail if x > 0.0 else tail


def _block_normals(seed: int, block: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normals for one substream block, deterministic in (seed, block)."""
    bitgen = np.random.Philox(seed=np.random.SeedSequence(entropy=(seed, block)))
    return np.random.Generator(bitgen).standard_normal(shape)


def draw_normals(seed: int, n_paths: int, n_steps: int) -> np.ndarray:
    """(n_paths, n_steps) standard normals with per-block substreams.

    Row i is identical for every n_paths >= i + 1.
    """
    if n_paths < 1 or n_steps < 1:
        raise ParameterError("n_paths and n_steps must be >= 1", field="n_paths")
    blocks = []
    n_blocks = (n_paths + BLOCK_PATHS - 1) // BLOCK_PATHS
    for b in range(n_blocks):
        rows = min(BLOCK_PATHS, n_paths - b * BLOCK_PATHS)
        z = _block_normals(seed, b, (BLOCK_PATHS, n_steps))
        blocks.append(z[:rows])
    return np.vstack(blocks)


def gbm_paths_from_normals(params: MarketParams, normals: np.ndarray) -> np.ndarray:
    """Exact GBM paths (n_paths, n_steps + 1) from given normal increments."""
    n_steps = normals.shape[1]
    dt = params.t_horizon / n_steps
    drift = (params.r - 0.5 * params.sigma**2) * dt
    vol = params.sigma * math.sqrt(dt)
    log_incr = drift + vol * normals
    log_paths = np.cumsum(log_incr, axis=1)
    out = np.empty((normals.shape[0], n_steps + 1))
    out[:, 0] = params.s0
    out[:, 1:] = params.s0 * np.exp(log_paths)
    return out


def simulate_paths(params: MarketParams, n_paths: int, n_steps: int, seed: int) -> PathSet:
    """Simulate risk-neutral GBM paths on a uniform grid of n_steps steps."""
    z = draw_normals(seed, n_paths, n_steps)
    values = gbm_paths_from_normals(params, z)
    times = np.linspace(0.0, params.t_horizon, n_steps + 1)
    return PathSet(times=times, values=values, seed=seed)


def bs_expected_payoff(params: MarketParams, h_kind: str, t: float, strike: float | None = None) -> float:
    """E*[h(S(t))] in closed form (undiscounted).

    h_kind is one of "call", "put" (both need ``strike``) or "identity".
    At t = 0 this is h(s0).
    """
    if not 0.0 <= t <= params.t_horizon:
        raise ParameterError("t must lie in [0, T]", field="t")
    if h_kind == "identity":
        return params.s0 * math.exp(params.r * t)
    if h_kind not in ("call", "put"):
        raise ParameterError(f"unknown payoff kind {h_kind!r}", field="h_kind")
    if strike is None or not strike > 0.0:
        raise ParameterError("call/put kinds need a positive strike", field="strike")
    fwd = params.s0 * math.exp(params.r * t)
    if t == 0.0:
        call = max(params.s0 - strike, 0.0)
    else:
        st = params.sigma * math.sqrt(t)
        d1 = (math.log(params.s0 / strike) + (params.r + 0.5 * params.sigma**2) * t) / st
        d2 = d1 - st
        call = fwd * norm_cdf(d1) - strike * norm_cdf(d2)
    if h_kind == "call":
        return call
    # put-call parity on undiscounted expectations: E(K-S)^+ = E(S-K)^+ - fwd + K
    return call - fwd + strike
