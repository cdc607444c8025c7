"""Batch front end: pricing runs, convergence sweeps, cross-method comparison.

One JSON config document drives everything; defaults are filled in and
echoed into every report so a report fully describes its own run.
Reports are byte-reproducible for a given config: floats are rounded to
12 significant digits, keys are sorted, and no timestamps are recorded.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 tolerance breach in ``compare``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .closed_form import TailStrategyConfig, tail_strategy_price
from .errors import NumericalFailure, ParameterError, PricingError
from .hjb import (
    _SOLVERS,
    auto_variant,
    default_grid,
    export_policy_csv,
    export_value_csv,
    extract_policy,
    ladder_price,
    refinement_delta,
)
from .market import MarketParams
from .smoothing import build_family
from .mc import builtin_policies, evaluate_policy
from .payoffs import ControlBounds, PayoffSpec, validate_spec
from .results import PriceEstimate

DEFAULT_EPSILONS = (0.2, 0.1, 0.05)
DEFAULT_GRID = {"nx": 41, "ny": 41, "nz": 81, "n_steps": 200}
DEFAULT_MC = {"n_paths": 200_000, "n_steps": 250, "seed": 20240801, "antithetic": True, "policy": "tail"}
DEFAULT_REL_FLOOR = 0.02


@dataclass
class RunConfig:
    """Validated run description; see ``from_dict`` for the JSON schema."""

    params: MarketParams
    spec: PayoffSpec
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    grid: dict = field(default_factory=lambda: dict(DEFAULT_GRID))
    mc: dict = field(default_factory=lambda: dict(DEFAULT_MC))
    methods: tuple[str, ...] = ("closed_form", "monte_carlo", "hjb")
    variant: str = "auto"
    rel_floor: float = DEFAULT_REL_FLOOR
    out_dir: str | None = None

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        def section(name, default=None):
            value = doc.get(name, default)
            if value is None:
                raise ParameterError("missing section", field=name)
            return value

        m = section("market")
        try:
            params = MarketParams(
                s0=float(m.get("s0", 0.0)), r=float(m.get("r", -1.0)),
                sigma=float(m.get("sigma", 0.0)), t_horizon=float(m.get("t_horizon", 0.0)),
            )
        except (TypeError, ValueError) as exc:
            raise ParameterError(str(exc), field="market") from exc
        p = section("payoff")
        bounds = ControlBounds(d0=float(p.get("d0", 0.0)), d1=float(p.get("d1", 0.0)))
        spec = PayoffSpec(
            f_kind=p.get("f_kind", "identity"),
            f_strike=_opt_float(p.get("f_strike")),
            payment_timing=p.get("payment_timing", "spot"),
            g_kind=p.get("g_kind", "identity"),
            g_strike=_opt_float(p.get("g_strike")),
            g_cap=_opt_float(p.get("g_cap")),
            weight_mode=p.get("weight_mode", "adapted_fixed_cumulative"),
            bounds=bounds,
        )
        validate_spec(spec, params)
        grid = dict(DEFAULT_GRID)
        grid.update(doc.get("grid", {}))
        mc = dict(DEFAULT_MC)
        mc.update(doc.get("mc", {}))
        cfg = RunConfig(
            params=params,
            spec=spec,
            epsilons=tuple(float(e) for e in doc.get("epsilons", DEFAULT_EPSILONS)),
            grid=grid,
            mc=mc,
            methods=tuple(doc.get("methods", ("closed_form", "monte_carlo", "hjb"))),
            variant=doc.get("variant", "auto"),
            rel_floor=float(doc.get("rel_floor", DEFAULT_REL_FLOOR)),
            out_dir=doc.get("out_dir"),
        )
        for m_name in cfg.methods:
            if m_name not in ("closed_form", "monte_carlo", "hjb"):
                raise ParameterError(f"unknown method {m_name!r}", field="methods")
        return cfg

    def echo(self) -> dict:
        """The config with all defaults made explicit (for reports)."""
        return {
            "market": asdict(self.params),
            "payoff": {
                "f_kind": self.spec.f_kind, "f_strike": self.spec.f_strike,
                "payment_timing": self.spec.payment_timing,
                "g_kind": self.spec.g_kind, "g_strike": self.spec.g_strike,
                "g_cap": self.spec.g_cap, "weight_mode": self.spec.weight_mode,
                "d0": self.spec.bounds.d0, "d1": self.spec.bounds.d1,
                "g_concave": self.spec.g_is_concave,
            },
            "epsilons": list(self.epsilons),
            "grid": dict(self.grid),
            "mc": dict(self.mc),
            "methods": list(self.methods),
            "variant": self.variant,
            "rel_floor": self.rel_floor,
        }


def _opt_float(v):
    return None if v is None else float(v)


def _closed_form_config(cfg: RunConfig) -> TailStrategyConfig:
    spec = cfg.spec
    if spec.g_kind != "identity":
        raise ParameterError("closed form covers identity g only", field="g_kind")
    if spec.bounds.d0 != 0.0:
        raise ParameterError("closed form needs d0 = 0", field="bounds.d0")
    if spec.payment_timing != "terminal_compounded" and cfg.params.r != 0.0:
        raise ParameterError(
            "closed form needs terminal-compounded payments when r > 0",
            field="payment_timing",
        )
    return TailStrategyConfig(
        params=cfg.params, cap=spec.bounds.d1, h_kind=spec.f_kind, strike=spec.f_strike,
    )


def _mc_policy(cfg: RunConfig, name: str):
    if name == "hjb":
        fam = build_family(min(cfg.epsilons), cfg.spec, cfg.params)
        variant = cfg.variant if cfg.variant != "auto" else auto_variant(cfg.spec)
        grid = default_grid(cfg.params, cfg.spec, fam, variant, **_grid_kwargs(cfg))
        vf = _SOLVERS[variant](cfg.params, cfg.spec, fam, grid, keep="all")
        return extract_policy(vf, fam)
    for pol in builtin_policies(cfg.spec, cfg.params):
        if pol.name == name:
            return pol
    known = [p.name for p in builtin_policies(cfg.spec, cfg.params)] + ["hjb"]
    raise ParameterError(f"unknown policy {name!r}; known: {known}", field="mc.policy")


def _grid_kwargs(cfg: RunConfig) -> dict:
    g = cfg.grid
    return {"nx": int(g["nx"]), "ny": int(g["ny"]), "nz": int(g["nz"]), "n_steps": int(g["n_steps"])}


def run_price(cfg: RunConfig) -> dict:
    """Run the selected methods and assemble the pricing report."""
    estimates: dict[str, dict] = {}
    if "closed_form" in cfg.methods:
        estimates["closed_form"] = _estimate_dict(tail_strategy_price(_closed_form_config(cfg)))
    if "monte_carlo" in cfg.methods:
        policy = _mc_policy(cfg, cfg.mc.get("policy", "tail"))
        est = evaluate_policy(
            policy, cfg.spec, cfg.params,
            n_paths=int(cfg.mc["n_paths"]), n_steps=int(cfg.mc["n_steps"]),
            seed=int(cfg.mc["seed"]), antithetic=bool(cfg.mc["antithetic"]),
        )
        estimates["monte_carlo"] = _estimate_dict(est)
    if "hjb" in cfg.methods:
        est, raw = ladder_price(
            cfg.params, cfg.spec, epsilons=cfg.epsilons, variant=cfg.variant,
            **_grid_kwargs(cfg),
        )
        block = _estimate_dict(est)
        block["ladder"] = [_estimate_dict(r) for r in raw]
        estimates["hjb"] = block
    return {"config": cfg.echo(), "estimates": estimates}


def run_compare(cfg: RunConfig) -> tuple[dict, bool]:
    """Cross-method table with pairwise gaps in units of combined tolerance.

    Tolerance for a pair = 3 * combined stderr + the discretisation
    allowance of any grid method involved + ``rel_floor`` of the larger
    price.  Returns (report, breach?).
    """
    if len(cfg.methods) < 2:
        raise ParameterError("compare needs at least two methods", field="methods")
    report = run_price(cfg)
    delta_grid = 0.0
    if "hjb" in report["estimates"]:
        delta_grid = refinement_delta(
            cfg.params, cfg.spec, min(cfg.epsilons), variant=cfg.variant,
            **_grid_kwargs(cfg),
        )
        report["estimates"]["hjb"]["delta_grid"] = delta_grid
    rows = []
    breach = False
    names = sorted(report["estimates"])
    for i, a in enumerate(names):
        for b_name in names[i + 1:]:
            ea, eb = report["estimates"][a], report["estimates"][b_name]
            gap = abs(ea["value"] - eb["value"])
            tol = 3.0 * math.hypot(ea["stderr"], eb["stderr"])
            tol += delta_grid * (("hjb" in (a, b_name)) and 1.0 or 0.0)
            tol += cfg.rel_floor * max(abs(ea["value"]), abs(eb["value"]))
            ratio = gap / tol if tol > 0 else math.inf
            rows.append({"method_a": a, "method_b": b_name, "gap": gap,
                         "tolerance": tol, "gap_over_tolerance": ratio})
            breach = breach or gap > tol
    report["comparison"] = rows
    report["breach"] = breach
    return report, breach


def run_convergence(cfg: RunConfig) -> dict:
    """Epsilon sweep plus one grid refinement at the finest epsilon."""
    est, raw = ladder_price(cfg.params, cfg.spec, epsilons=cfg.epsilons,
                            variant=cfg.variant, **_grid_kwargs(cfg))
    values = [r.value for r in raw]
    gaps = [abs(b - a) for a, b in zip(values, values[1:])]
    ratios = [g0 / g1 if g1 > 0 else math.inf for g0, g1 in zip(gaps, gaps[1:])]
    delta_grid = refinement_delta(cfg.params, cfg.spec, min(cfg.epsilons),
                                  variant=cfg.variant, **_grid_kwargs(cfg))
    return {
        "config": cfg.echo(),
        "epsilons": [r.meta["epsilon"] for r in raw],
        "prices": values,
        "gaps": gaps,
        "gap_ratios": ratios,
        "extrapolated": est.value,
        "delta_grid": delta_grid,
    }


def _estimate_dict(est: PriceEstimate) -> dict:
    return {"value": est.value, "stderr": est.stderr, "method": est.method, "meta": est.meta}


# ---------------------------------------------------------------------------
# deterministic serialisation
# ---------------------------------------------------------------------------

def _round_floats(obj):
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.12g}")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def write_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round_floats(report), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_compare_csv(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,price,stderr\n")
        for name in sorted(report["estimates"]):
            e = report["estimates"][name]
            fh.write(f"{name},{e['value']:.12g},{e['stderr']:.12g}\n")
        fh.write("method_a,method_b,gap,tolerance,gap_over_tolerance\n")
        for row in report["comparison"]:
            fh.write(
                f"{row['method_a']},{row['method_b']},{row['gap']:.12g},"
                f"{row['tolerance']:.12g},{row['gap_over_tolerance']:.12g}\n"
            )


def write_convergence_csv(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epsilon,price,gap,gap_ratio\n")
        eps, prices = report["epsilons"], report["prices"]
        gaps = [""] + [f"{g:.12g}" for g in report["gaps"]]
        ratios = ["", ""] + [f"{r:.12g}" for r in report["gap_ratios"]]
        for i in range(len(eps)):
            fh.write(f"{eps[i]:.12g},{prices[i]:.12g},{gaps[i]},{ratios[i]}\n")


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _load_config(path: str, overrides: argparse.Namespace) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config: {exc}", field="config") from exc
    cfg = RunConfig.from_dict(doc)
    if getattr(overrides, "seed", None) is not None:
        cfg.mc["seed"] = overrides.seed
    if getattr(overrides, "out_dir", None) is not None:
        cfg.out_dir = overrides.out_dir
    if getattr(overrides, "epsilons", None):
        cfg.epsilons = tuple(float(e) for e in overrides.epsilons.split(","))
    if getattr(overrides, "methods", None):
        cfg.methods = tuple(overrides.methods.split(","))
    if getattr(overrides, "policy", None):
        cfg.mc["policy"] = overrides.policy
    if getattr(overrides, "n_paths", None):
        cfg.mc["n_paths"] = overrides.n_paths
    if getattr(overrides, "n_steps", None):
        cfg.mc["n_steps"] = overrides.n_steps
    if getattr(overrides, "variant", None):
        cfg.variant = overrides.variant
    return cfg


def _emit(report: dict, cfg: RunConfig, name: str) -> None:
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        write_report(report, os.path.join(cfg.out_dir, name))
    json.dump(_round_floats(report), sys.stdout, sort_keys=True, indent=2)
    sys.stdout.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="controlled-options")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("price-hjb", help="epsilon-ladder grid price")
    common(p)
    p.add_argument("--epsilons", default=None, help="comma list, e.g. 0.2,0.1,0.05")
    p.add_argument("--variant", default=None, choices=["auto", "adapted", "linear_reduced", "normalized"])

    p = sub.add_parser("price-mc", help="Monte Carlo policy price")
    common(p)
    p.add_argument("--policy", default=None)
    p.add_argument("--n-paths", type=int, default=None)
    p.add_argument("--n-steps", type=int, default=None)

    p = sub.add_parser("price-closed-form", help="tail-strategy quadrature price")
    common(p)

    p = sub.add_parser("compare", help="cross-method table; exit 4 on tolerance breach")
    common(p)
    p.add_argument("--methods", default=None, help="comma list of >= 2 methods")
    p.add_argument("--epsilons", default=None)
    p.add_argument("--variant", default=None)

    p = sub.add_parser("convergence", help="epsilon and grid sweeps")
    common(p)
    p.add_argument("--epsilons", default=None)
    p.add_argument("--variant", default=None)

    p = sub.add_parser("export-value", help="CSV slice of the value function or policy")
    common(p)
    p.add_argument("--what", choices=["value", "policy"], default="value")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--time-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config, args)
        if args.command == "price-hjb":
            cfg.methods = ("hjb",)
            _emit(run_price(cfg), cfg, "report.json")
        elif args.command == "price-mc":
            cfg.methods = ("monte_carlo",)
            _emit(run_price(cfg), cfg, "report.json")
        elif args.command == "price-closed-form":
            cfg.methods = ("closed_form",)
            _emit(run_price(cfg), cfg, "report.json")
        elif args.command == "compare":
            report, breach = run_compare(cfg)
            _emit(report, cfg, "compare.json")
            if cfg.out_dir:
                write_compare_csv(report, os.path.join(cfg.out_dir, "compare.csv"))
            if breach:
                return 4
        elif args.command == "convergence":
            report = run_convergence(cfg)
            _emit(report, cfg, "convergence.json")
            if cfg.out_dir:
                write_convergence_csv(report, os.path.join(cfg.out_dir, "convergence.csv"))
        elif args.command == "export-value":
            eps = args.epsilon if args.epsilon is not None else min(cfg.epsilons)
            fam = build_family(eps, cfg.spec, cfg.params)
            variant = cfg.variant if cfg.variant != "auto" else auto_variant(cfg.spec)
            grid = default_grid(cfg.params, cfg.spec, fam, variant, **_grid_kwargs(cfg))
            vf = _SOLVERS[variant](cfg.params, cfg.spec, fam, grid, keep="all")
            if args.what == "value":
                export_value_csv(vf, args.out, time_index=args.time_index)
            else:
                export_policy_csv(extract_policy(vf, fam), vf, args.out, time_index=args.time_index)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except PricingError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
