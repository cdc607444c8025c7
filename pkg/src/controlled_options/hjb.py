"""Backward dynamic-programming solvers on tensor grids in (x, y, log S, t).

Three regularised problems share one sweep:

* ``adapted``        -- state (x, y, z); dx = u xi(y) phi(S, t) dt,
  dy = u dt, terminal reward g_hat(x).
* ``linear_reduced`` -- state (y, z); running reward u xi(y) phi(S, t),
  terminal value 0.  Valid for identity g only.
* ``normalized``     -- state (x, y, z); dx = h(u, t) phi(S, t) dt,
  dy = h(u, t) dt, terminal reward g2(x, y).

The scheme is monotone without a transport CFL restriction:

* x and y carry no diffusion, so their transport is semi-Lagrangian --
  each backward step reads the next slice at the foot of the (exact,
  degenerate) characteristic, with multilinear interpolation and feet
  clamped to the grid (the flow is outward for non-negative rates).
* z carries the only diffusion; drift r - sigma^2/2 is upwinded and the
  diffusion solved implicitly (one constant tridiagonal factor per
  sweep, unconditionally stable).  At z_min/z_max the second difference
  is dropped (the value is asymptotically linear there) and the drift is
  kept only when its upwind neighbour lies inside the grid.
* The Hamiltonian is affine in u, so the max is taken over the two
  endpoint controls only; ties go to d1.

The payoff weight u enters both transport rates linearly, which is what
makes the optimal control bang-bang.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .errors import ExtrapolationError, GridError, NumericalFailure, ParameterError
from .market import MarketParams
from .payoffs import PayoffSpec
from .results import PriceEstimate
from .smoothing import SmoothingFamily, build_family

VARIANTS = ("adapted", "linear_reduced", "normalized")


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def _check_axis(nodes: np.ndarray, name: str) -> None:
    if nodes.ndim != 1 or nodes.size < 2:
        raise GridError(f"{name} axis needs at least two nodes")
    if np.any(np.diff(nodes) <= 0.0):
        raise GridError(f"{name} axis must be strictly increasing")


@dataclass(frozen=True)
class StateGrid:
    """Tensor grid; ``x_nodes`` is None for the reduced (y, z) problem."""

    y_nodes: np.ndarray
    z_nodes: np.ndarray
    n_steps: int
    x_nodes: np.ndarray | None = None

    def __post_init__(self):
        if self.x_nodes is not None:
            _check_axis(np.asarray(self.x_nodes), "x")
        _check_axis(np.asarray(self.y_nodes), "y")
        _check_axis(np.asarray(self.z_nodes), "z")
        if self.n_steps < 1:
            raise GridError("need at least one time step")
        dz = np.diff(self.z_nodes)
        if not np.allclose(dz, dz[0], rtol=1e-9):
            raise GridError("z axis must be uniform (implicit diffusion stencil)")

    @property
    def shape(self) -> tuple[int, ...]:
        if self.x_nodes is None:
            return (self.y_nodes.size, self.z_nodes.size)
        return (self.x_nodes.size, self.y_nodes.size, self.z_nodes.size)


def default_grid(
    params: MarketParams,
    spec: PayoffSpec,
    fam: SmoothingFamily,
    variant: str,
    nx: int = 41,
    ny: int = 41,
    nz: int = 81,
    n_steps: int = 200,
) -> StateGrid:
    """Desk-scale grid: 41 x 41 x 81 nodes, 200 steps, z-range log s0 +- 5 sig sqrt(T).

    The x axis densifies below the reward kink (cap level or strike) when
    one exists, so coarse far-field nodes do not starve the curved region.
    """
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}", field="variant")
    T = params.t_horizon
    half = max(5.0 * params.sigma * np.sqrt(T), 1e-6)
    z0 = np.log(params.s0)
    # the axis tracks the drift-carried spot; the pure +-5 sigma sqrt(T) band
    # loses the state entirely when r dominates sigma
    mu_span = (params.r - 0.5 * params.sigma**2) * T
    z_nodes = np.linspace(z0 + min(mu_span, 0.0) - half, z0 + max(mu_span, 0.0) + half, nz)

    if variant == "normalized":
        # the ratio reward bends on the y ~ eps^2 scale near the origin;
        # geometric packing there keeps the interpolation honest
        y_max = spec.bounds.d1 * T + 1.0
        eps = fam.epsilon
        n_fine = min(max(3, ny // 4), max(ny - 2, 1))
        fine = np.geomspace(0.25 * eps * eps, min(4.0 * eps, 0.5 * y_max), n_fine)
        coarse = np.linspace(0.0, y_max, max(ny - n_fine, 2))
        y_nodes = np.unique(np.concatenate([coarse, fine]))
        keep = np.concatenate([[True], np.diff(y_nodes) > 1e-12 * y_max])
        y_nodes = y_nodes[keep]
    else:
        # keep the node budget but resolve the eps^2 cutoff band, where the
        # value has a kink in y that coarse linear interpolation biases
        y_max = max(1.25, 1.0 + fam.epsilon + 0.05)
        eps = fam.epsilon
        n_band = min(9, max(3, ny // 5))
        band = np.linspace(1.0 - eps, 1.0 - eps + eps * eps, n_band)
        base = np.linspace(0.0, y_max, max(ny - n_band, 2))
        y_nodes = np.unique(np.concatenate([base, band]))
        keep = np.concatenate([[True], np.diff(y_nodes) > 1e-9 * y_max])
        y_nodes = y_nodes[keep]

    x_nodes = None
    if variant != "linear_reduced":
        t_probe = np.linspace(0.0, T, 9)[:, None]
        phi_max = float(np.max(fam.payoff_rate(np.exp(z_nodes)[None, :], t_probe)))
        x_max = spec.bounds.d1 * T * max(phi_max, 1e-12) * (1.0 + 1e-9)
        if variant == "normalized":
            # log spacing from the eps^2 scale up: the reward depends on x/y,
            # so cells near the origin must shrink in x as they do in y or
            # interpolation corners see wildly inflated ratios
            eps = fam.epsilon
            lo = max(0.25 * eps * eps * phi_max, 1e-12 * x_max)
            x_nodes = np.concatenate([[0.0], np.geomspace(lo, x_max, nx - 1)])
        else:
            knee = spec.g_cap if spec.g_kind == "cap" else spec.g_strike
            if knee is not None and 3.0 * knee < 0.5 * x_max:
                n_dense = max(2, int(round(0.8 * nx)))
                dense = np.linspace(0.0, 3.0 * knee, n_dense)
                coarse = np.linspace(3.0 * knee, x_max, nx - n_dense + 1)[1:]
                x_nodes = np.concatenate([dense, coarse])
            else:
                x_nodes = np.linspace(0.0, x_max, nx)
    return StateGrid(y_nodes=y_nodes, z_nodes=z_nodes, n_steps=n_steps, x_nodes=x_nodes)


def refine_grid(grid: StateGrid) -> StateGrid:
    """Halve every spacing (node counts 2n-1) and double the step count."""

    def _halve(nodes):
        mid = 0.5 * (nodes[:-1] + nodes[1:])
        out = np.empty(nodes.size * 2 - 1)
        out[0::2] = nodes
        out[1::2] = mid
        return out

    return StateGrid(
        y_nodes=_halve(grid.y_nodes),
        z_nodes=_halve(grid.z_nodes),
        n_steps=2 * grid.n_steps,
        x_nodes=None if grid.x_nodes is None else _halve(grid.x_nodes),
    )


# ---------------------------------------------------------------------------
# interpolation helpers
# ---------------------------------------------------------------------------

class _Axis:
    """Locate query points on a 1-d axis, with a uniform fast path."""

    def __init__(self, nodes: np.ndarray):
        self.nodes = nodes
        d = np.diff(nodes)
        self.uniform = bool(np.allclose(d, d[0], rtol=1e-9))
        self.lo = nodes[0]
        self.hi = nodes[-1]
        self.inv_step = 1.0 / d[0] if self.uniform else None

    def locate(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = np.clip(q, self.lo, self.hi)
        if self.uniform:
            pos = (q - self.lo) * self.inv_step
            idx = np.minimum(pos.astype(np.int64), self.nodes.size - 2)
            frac = pos - idx
        else:
            idx = np.searchsorted(self.nodes, q, side="right") - 1
            idx = np.clip(idx, 0, self.nodes.size - 2)
            frac = (q - self.nodes[idx]) / (self.nodes[idx + 1] - self.nodes[idx])
        return idx, np.clip(frac, 0.0, 1.0)


def _interp_y(values: np.ndarray, axis_y: _Axis, foot_y: np.ndarray) -> np.ndarray:
    """Linear interpolation along y of values (ny, nz) at feet (ny, nz)."""
    iy, wy = axis_y.locate(foot_y)
    k = np.arange(values.shape[1])[None, :]
    return (1.0 - wy) * values[iy, k] + wy * values[iy + 1, k]


def _interp_xy(values: np.ndarray, axis_x: _Axis, axis_y: _Axis, foot_x, foot_y) -> np.ndarray:
    """Bilinear interpolation in (x, y) of values (nx, ny, nz), z untouched."""
    ix, wx = axis_x.locate(foot_x)
    iy, wy = axis_y.locate(foot_y)
    k = np.arange(values.shape[2])[None, None, :]
    v00 = values[ix, iy, k]
    v10 = values[ix + 1, iy, k]
    v01 = values[ix, iy + 1, k]
    v11 = values[ix + 1, iy + 1, k]
    return ((1.0 - wx) * ((1.0 - wy) * v00 + wy * v01)
            + wx * ((1.0 - wy) * v10 + wy * v11))


# ---------------------------------------------------------------------------
# implicit z-step
# ---------------------------------------------------------------------------

def _z_step_matrix(params: MarketParams, z_nodes: np.ndarray, dt: float) -> np.ndarray:
    """Banded (I - dt A) for A = mu d_z (upwind) + sigma^2/2 d_zz.

    Boundary rows drop the second difference; the drift survives there
    only when its upwind neighbour is interior (outflow is dropped).
    Returns the (3, nz) banded form for scipy.linalg.solve_banded.
    """
    nz = z_nodes.size
    dz = z_nodes[1] - z_nodes[0]
    mu = params.r - 0.5 * params.sigma**2
    mu_p, mu_m = max(mu, 0.0), min(mu, 0.0)
    a = 0.5 * params.sigma**2 / dz**2

    upper = np.full(nz - 1, mu_p / dz + a)
    lower = np.full(nz - 1, -mu_m / dz + a)
    diag = np.full(nz, -(mu_p - mu_m) / dz - 2.0 * a)
    # boundary rows: no diffusion; drift only toward the interior
    upper[0] = mu_p / dz
    diag[0] = -mu_p / dz
    lower[-1] = -mu_m / dz
    diag[-1] = mu_m / dz

    ab = np.zeros((3, nz))
    ab[0, 1:] = -dt * upper
    ab[1, :] = 1.0 - dt * diag
    ab[2, :-1] = -dt * lower
    if np.any(ab[0, 1:] > 0.0) or np.any(ab[2, :-1] > 0.0) or np.any(ab[1] <= 0.0):
        raise GridError("z-step lost the M-matrix property; check sigma, dz, dt")
    return ab


def _solve_z(ab: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply (I - dt A)^-1 along the last (z) axis."""
    flat = values.reshape(-1, values.shape[-1])
    out = solve_banded((1, 1), ab, flat.T, overwrite_b=False, check_finite=False)
    return np.ascontiguousarray(out.T).reshape(values.shape)


def diffuse_terminal(params: MarketParams, z_nodes: np.ndarray, n_steps: int,
                     terminal: np.ndarray) -> np.ndarray:
    """Pure drift-diffusion rollback of terminal z-data to t = 0.

    Runs the exact z-step used by the full solvers with all control
    transport disabled; the scheme-validation tests compare this against
    the closed-form heat kernel.
    """
    dt = params.t_horizon / n_steps
    ab = _z_step_matrix(params, np.asarray(z_nodes, dtype=float), dt)
    v = np.asarray(terminal, dtype=float).copy()
    for _ in range(n_steps):
        v = _solve_z(ab, v[None, :])[0]
    return v


# ---------------------------------------------------------------------------
# value functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValueFunction:
    """Grid-sampled value of one regularised problem.

    ``values[n]`` is the slice at ``times[n]``; when the sweep is run
    with ``keep="initial"`` only the t = 0 slice is retained.
    """

    grid: StateGrid
    variant: str
    epsilon: float
    times: np.ndarray
    values: np.ndarray
    spec: PayoffSpec
    params: MarketParams

    @property
    def full_history(self) -> bool:
        return self.values.shape[0] == self.times.size


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Policy:
    """Feedback control map (t, x, y, S) -> u in {d0, d1} or [d0, d1].

    ``grid_table`` policies hold one boolean slab per time step (True
    selects d1) and use nearest-node lookup in (x, y, z) with the
    enclosing time slice.  ``analytic`` policies wrap a callable.
    """

    source: str
    d0: float
    d1: float
    name: str = "policy"
    fn: Callable | None = None
    table: np.ndarray | None = None
    grid: StateGrid | None = None
    t_horizon: float | None = None
    meta: dict = field(default_factory=dict)

    def evaluate(self, t: float, x, y, s):
        """Vectorised over path arrays x, y, s at a common time t."""
        if self.source == "analytic":
            u = np.asarray(self.fn(t, x, y, s), dtype=float)
            return np.clip(u, self.d0, self.d1)
        g = self.grid
        n_steps = self.table.shape[0]
        dt = self.t_horizon / n_steps
        n = min(int(t / dt + 1e-12), n_steps - 1)
        iy = _nearest(g.y_nodes, np.asarray(y, dtype=float))
        iz = _nearest(g.z_nodes, np.log(np.asarray(s, dtype=float)))
        if g.x_nodes is None:
            picks = self.table[n, iy, iz]
        else:
            ix = _nearest(g.x_nodes, np.asarray(x, dtype=float))
            picks = self.table[n, ix, iy, iz]
        return np.where(picks, self.d1, self.d0)


def _nearest(nodes: np.ndarray, q: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(nodes, q)
    idx = np.clip(idx, 1, nodes.size - 1)
    left = q - nodes[idx - 1] <= nodes[idx] - q
    return np.where(left, idx - 1, idx)


# ---------------------------------------------------------------------------
# the backward sweep
# ---------------------------------------------------------------------------

def _validate(params, spec, fam, grid, variant):
    z0 = np.log(params.s0)
    if not grid.z_nodes[0] <= z0 <= grid.z_nodes[-1]:
        raise GridError("z axis must contain log s0")
    eps = fam.epsilon
    if variant in ("adapted", "linear_reduced"):
        if grid.y_nodes[-1] < 1.0 + eps:
            raise GridError("y_max must cover the budget cutoff region (>= 1 + eps)")
    if variant == "adapted" and spec.weight_mode != "adapted_fixed_cumulative":
        raise ParameterError("adapted solver needs weight_mode=adapted_fixed_cumulative", field="weight_mode")
    if variant == "linear_reduced":
        if spec.weight_mode != "adapted_fixed_cumulative" or spec.g_kind != "identity":
            raise ParameterError("linear_reduced needs adapted mode with identity g", field="g_kind")
    if variant == "normalized" and spec.weight_mode != "normalized":
        raise ParameterError("normalized solver needs weight_mode=normalized", field="weight_mode")
    if variant != "linear_reduced":
        t_probe = np.linspace(0.0, params.t_horizon, 9)[:, None]
        phi_max = float(np.max(fam.payoff_rate(np.exp(grid.z_nodes)[None, :], t_probe)))
        need = spec.bounds.d1 * params.t_horizon * phi_max
        if grid.x_nodes[-1] < need * (1.0 - 1e-9):
            raise GridError(f"x_max {grid.x_nodes[-1]:g} below reachable bound {need:g}")
    # resolution advisories (accuracy, not stability)
    dy = float(np.min(np.diff(grid.y_nodes)))
    dt = params.t_horizon / grid.n_steps
    if variant != "normalized" and dy > 0.5 * eps * eps:
        warnings.warn(
            f"y spacing {dy:.4g} does not resolve the eps^2 cutoff band "
            f"({eps * eps:.4g}); expect extra smearing",
            RuntimeWarning,
            stacklevel=3,
        )
    if dt > 0.5 * eps * eps:
        warnings.warn(
            f"time step {dt:.4g} does not resolve the eps^2 ramp near T",
            RuntimeWarning,
            stacklevel=3,
        )


def _sweep(params: MarketParams, spec: PayoffSpec, fam: SmoothingFamily,
           grid: StateGrid, variant: str, keep: str = "all") -> ValueFunction:
    _validate(params, spec, fam, grid, variant)
    if keep not in ("all", "initial"):
        raise ParameterError("keep must be 'all' or 'initial'", field="keep")
    T = params.t_horizon
    nt = grid.n_steps
    dt = T / nt
    times = np.linspace(0.0, T, nt + 1)
    y = grid.y_nodes
    z = grid.z_nodes
    s_of_z = np.exp(z)
    d0, d1 = spec.bounds.d0, spec.bounds.d1
    controls = (d0,) if d1 == d0 else (d0, d1)
    ab = _z_step_matrix(params, z, dt)
    ax_y = _Axis(y)

    if variant == "linear_reduced":
        cur = np.zeros((y.size, z.size))
    else:
        x = grid.x_nodes
        ax_x = _Axis(x)
        if variant == "adapted":
            cur = np.broadcast_to(
                fam.terminal_reward(x)[:, None, None], (x.size, y.size, z.size)
            ).copy()
        else:
            cur = np.broadcast_to(
                fam.ratio_reward(x[:, None], y[None, :])[:, :, None],
                (x.size, y.size, z.size),
            ).copy()

    if keep == "all":
        history = np.empty((nt + 1,) + cur.shape)
        history[nt] = cur

    for n in range(nt - 1, -1, -1):
        t_n = times[n]
        phi = fam.payoff_rate(s_of_z, t_n)  # (nz,)
        best = None
        for u in controls:
            # the cutoff and ramp factors integrate in closed form along the
            # (deterministic) y/t characteristic, so the sub-cell eps^2 bands
            # are credited exactly rather than sampled at nodes
            if variant == "linear_reduced":
                gain = fam.budget_cutoff_integral(y + dt * u) - fam.budget_cutoff_integral(y)
                foot_y = np.broadcast_to((y + dt * u)[:, None], cur.shape)
                cand = _interp_y(cur, ax_y, foot_y) + gain[:, None] * phi[None, :]
            elif variant == "adapted":
                gain = fam.budget_cutoff_integral(y + dt * u) - fam.budget_cutoff_integral(y)
                foot_x = x[:, None, None] + gain[None, :, None] * phi[None, None, :]
                foot_y = np.broadcast_to((y + dt * u)[None, :, None], cur.shape)
                cand = _interp_xy(cur, ax_x, ax_y, foot_x, foot_y)
            else:
                h_int = float(fam.effective_control_integral(u, t_n, times[n + 1]))
                foot_x = x[:, None, None] + h_int * phi[None, None, :]
                foot_y = np.broadcast_to((y + h_int)[None, :, None], cur.shape)
                cand = _interp_xy(cur, ax_x, ax_y, foot_x, foot_y)
            best = cand if best is None else np.maximum(best, cand)
        cur = _solve_z(ab, best)
        if not np.all(np.isfinite(cur)):
            raise NumericalFailure(f"non-finite values in slice {n}", time_index=n)
        if keep == "all":
            history[n] = cur

    values = history if keep == "all" else cur[None, ...]
    return ValueFunction(grid=grid, variant=variant, epsilon=fam.epsilon,
                         times=times, values=values, spec=spec, params=params)


def solve_adapted(params, spec, fam, grid, keep="all") -> ValueFunction:
    """Value of the budget-constrained problem with terminal reward g_hat(x)."""
    return _sweep(params, spec, fam, grid, "adapted", keep)


def solve_linear_reduced(params, spec, fam, grid, keep="all") -> ValueFunction:
    """Value of the running-reward reduction valid for identity g."""
    return _sweep(params, spec, fam, grid, "linear_reduced", keep)


def solve_normalized(params, spec, fam, grid, keep="all") -> ValueFunction:
    """Value of the renormalised-weight problem with terminal reward g2(x, y)."""
    return _sweep(params, spec, fam, grid, "normalized", keep)


# ---------------------------------------------------------------------------
# price readout and policy extraction
# ---------------------------------------------------------------------------

def price_from_value(vf: ValueFunction, params: MarketParams) -> PriceEstimate:
    """Discounted value at (x=0, y=0, z=log s0, t=0) by multilinear interpolation."""
    z0 = np.log(params.s0)
    g = vf.grid
    if not g.z_nodes[0] <= z0 <= g.z_nodes[-1]:
        raise ExtrapolationError("log s0 outside the z grid")
    slice0 = vf.values[0]
    iz, wz = _Axis(g.z_nodes).locate(np.array([z0]))
    if g.x_nodes is not None:
        if g.x_nodes[0] > 0.0 or g.y_nodes[0] > 0.0:
            raise ExtrapolationError("grid does not contain the origin in (x, y)")
        line = slice0[0, 0, :]
    else:
        if g.y_nodes[0] > 0.0:
            raise ExtrapolationError("grid does not contain y = 0")
        line = slice0[0, :]
    raw = float((1.0 - wz[0]) * line[iz[0]] + wz[0] * line[iz[0] + 1])
    value = float(np.exp(-params.r * params.t_horizon) * raw)
    return PriceEstimate(
        value=value,
        stderr=0.0,
        method="hjb",
        meta={
            "epsilon": vf.epsilon,
            "variant": vf.variant,
            "grid_shape": list(vf.grid.shape),
            "n_steps": vf.grid.n_steps,
        },
    )


def extract_policy(vf: ValueFunction, fam: SmoothingFamily) -> Policy:
    """Bang-bang feedback from the sign of the Hamiltonian's u-coefficient.

    The switching value is assembled from centered differences of the
    value in x and y; it is >= 0 exactly where pushing weight is (weakly)
    favourable, and ties resolve to d1.  Whole regions are exact ties in
    the continuum (the weight has no effect once it cannot bind), so
    "tie" is read with a small tolerance against derivative noise.
    """
    if not vf.full_history:
        raise ParameterError("policy extraction needs the full time history", field="values")
    g = vf.grid
    spec = vf.spec
    nt = g.n_steps
    times = vf.times
    s_of_z = np.exp(g.z_nodes)
    table = np.empty((nt,) + vf.values.shape[1:], dtype=bool)
    for n in range(nt):
        J = vf.values[n]
        phi = fam.payoff_rate(s_of_z, times[n])
        if vf.variant == "linear_reduced":
            j_y = np.gradient(J, g.y_nodes, axis=0)
            switch = j_y + fam.budget_cutoff(g.y_nodes)[:, None] * phi[None, :]
        elif vf.variant == "adapted":
            j_x = np.gradient(J, g.x_nodes, axis=0)
            j_y = np.gradient(J, g.y_nodes, axis=1)
            xi = fam.budget_cutoff(g.y_nodes)[None, :, None]
            switch = j_x * xi * phi[None, None, :] + j_y
        else:
            j_x = np.gradient(J, g.x_nodes, axis=0)
            j_y = np.gradient(J, g.y_nodes, axis=1)
            gate = 1.0 - float(fam.terminal_ramp(times[n]))
            switch = gate * (j_x * phi[None, None, :] + j_y)
        tie_tol = 1e-9 * (1.0 + float(np.max(np.abs(switch))))
        table[n] = switch >= -tie_tol
    return Policy(
        source="grid_table",
        d0=spec.bounds.d0,
        d1=spec.bounds.d1,
        name=f"hjb[{vf.variant}]",
        table=table,
        grid=g,
        t_horizon=vf.params.t_horizon,
        meta={"epsilon": vf.epsilon},
    )


# ---------------------------------------------------------------------------
# epsilon ladders
# ---------------------------------------------------------------------------

def auto_variant(spec: PayoffSpec) -> str:
    if spec.weight_mode == "normalized":
        return "normalized"
    return "linear_reduced" if spec.g_kind == "identity" else "adapted"


_SOLVERS = {
    "adapted": solve_adapted,
    "linear_reduced": solve_linear_reduced,
    "normalized": solve_normalized,
}


def ladder_price(
    params: MarketParams,
    spec: PayoffSpec,
    epsilons=(0.2, 0.1, 0.05),
    variant: str = "auto",
    grid: StateGrid | None = None,
    nx: int = 41,
    ny: int = 41,
    nz: int = 81,
    n_steps: int = 200,
    keep: str = "initial",
) -> tuple[PriceEstimate, list[PriceEstimate]]:
    """Solve along a decreasing epsilon ladder and Richardson-extrapolate.

    The regularisation error is first order in epsilon, so the reported
    price combines the last two rungs as
    p* = p(e2) + (p(e2) - p(e1)) e2 / (e1 - e2).
    Raw per-epsilon estimates come back alongside.
    """
    epsilons = sorted(set(float(e) for e in epsilons), reverse=True)
    if not epsilons:
        raise ParameterError("need at least one epsilon", field="epsilons")
    if variant == "auto":
        variant = auto_variant(spec)
    solver = _SOLVERS[variant]
    raw: list[PriceEstimate] = []
    for eps in epsilons:
        fam = build_family(eps, spec, params)
        g = grid if grid is not None else default_grid(params, spec, fam, variant, nx, ny, nz, n_steps)
        vf = solver(params, spec, fam, g, keep=keep)
        raw.append(price_from_value(vf, params))
    if len(raw) >= 2:
        e1, e2 = epsilons[-2], epsilons[-1]
        p1, p2 = raw[-2].value, raw[-1].value
        value = p2 + (p2 - p1) * e2 / (e1 - e2)
    else:
        value = raw[0].value
    est = PriceEstimate(
        value=value,
        stderr=0.0,
        method="hjb",
        meta={
            "variant": variant,
            "epsilons": list(epsilons),
            "raw_values": [r.value for r in raw],
            "extrapolated": len(raw) >= 2,
            "grid_shape": list(raw[-1].meta["grid_shape"]),
            "n_steps": raw[-1].meta["n_steps"],
        },
    )
    return est, raw


def refinement_delta(
    params: MarketParams,
    spec: PayoffSpec,
    epsilon: float,
    variant: str = "auto",
    nx: int = 41,
    ny: int = 41,
    nz: int = 81,
    n_steps: int = 200,
) -> float:
    """|price(grid) - price(refined grid)| at one epsilon: the empirical
    discretisation allowance used in cross-method tolerances."""
    if variant == "auto":
        variant = auto_variant(spec)
    fam = build_family(epsilon, spec, params)
    base = default_grid(params, spec, fam, variant, nx, ny, nz, n_steps)
    fine = refine_grid(base)
    solver = _SOLVERS[variant]
    p0 = price_from_value(solver(params, spec, fam, base, keep="initial"), params)
    p1 = price_from_value(solver(params, spec, fam, fine, keep="initial"), params)
    return abs(p0.value - p1.value)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def export_value_csv(vf: ValueFunction, path: str, time_index: int = 0) -> None:
    """Write one time slice as CSV with columns t,x,y,z,value.

    The reduced variant has no x state; its x column is written as 0.
    """
    _export_csv(vf.values[time_index], vf, float(vf.times[time_index]), path, "value")


def export_policy_csv(policy: Policy, vf: ValueFunction, path: str, time_index: int = 0) -> None:
    """Write one policy slice as CSV with columns t,x,y,z,u."""
    if policy.source != "grid_table":
        raise ParameterError("only grid_table policies export to CSV", field="policy")
    slab = np.where(policy.table[time_index], policy.d1, policy.d0)
    _export_csv(slab, vf, float(vf.times[time_index]), path, "u")


def _export_csv(slab: np.ndarray, vf: ValueFunction, t: float, path: str, col: str) -> None:
    g = vf.grid
    x_nodes = g.x_nodes if g.x_nodes is not None else np.array([0.0])
    vals = slab if slab.ndim == 3 else slab[None, ...]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"t,x,y,z,{col}\n")
        for i, xv in enumerate(x_nodes):
            for j, yv in enumerate(g.y_nodes):
                for k, zv in enumerate(g.z_nodes):
                    fh.write(f"{t:.12g},{xv:.12g},{yv:.12g},{zv:.12g},{vals[i, j, k]:.12g}\n")
