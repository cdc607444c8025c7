"""Pricing engine for weight-controlled options.

Three mutually validating routes: regularised HJB grid solvers,
closed-form tail-strategy quadrature, and Monte Carlo policy evaluation
under the risk-neutral measure.
"""

from .closed_form import (
    TailStrategyConfig,
    hypothesis_report,
    tail_strategy,
    tail_strategy_price,
    uniform_strategy_price,
)
from .errors import (
    AdmissibilityError,
    ExtrapolationError,
    GridError,
    NumericalFailure,
    ParameterError,
    PricingError,
)
from .hjb import (
    Policy,
    StateGrid,
    ValueFunction,
    auto_variant,
    default_grid,
    diffuse_terminal,
    export_policy_csv,
    export_value_csv,
    extract_policy,
    ladder_price,
    price_from_value,
    refine_grid,
    refinement_delta,
    solve_adapted,
    solve_linear_reduced,
    solve_normalized,
)
from .market import MarketParams, PathSet, bs_expected_payoff, norm_cdf, simulate_paths
from .mc import builtin_policies, evaluate_policy, price_terminal_payoff
from .payoffs import (
    ControlBounds,
    PayoffSpec,
    eval_f,
    eval_g,
    growth_bound_constant,
    payoff_adapted,
    payoff_normalized,
    validate_spec,
)
from .results import PriceEstimate
from .smoothing import SmoothingFamily, build_family

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "ControlBounds",
    "ExtrapolationError",
    "GridError",
    "MarketParams",
    "NumericalFailure",
    "ParameterError",
    "PathSet",
    "PayoffSpec",
    "Policy",
    "PriceEstimate",
    "PricingError",
    "SmoothingFamily",
    "StateGrid",
    "TailStrategyConfig",
    "ValueFunction",
    "auto_variant",
    "bs_expected_payoff",
    "build_family",
    "builtin_policies",
    "default_grid",
    "diffuse_terminal",
    "eval_f",
    "eval_g",
    "evaluate_policy",
    "export_policy_csv",
    "export_value_csv",
    "extract_policy",
    "growth_bound_constant",
    "hypothesis_report",
    "ladder_price",
    "norm_cdf",
    "payoff_adapted",
    "payoff_normalized",
    "price_from_value",
    "price_terminal_payoff",
    "refine_grid",
    "refinement_delta",
    "simulate_paths",
    "solve_adapted",
    "solve_linear_reduced",
    "solve_normalized",
    "tail_strategy",
    "tail_strategy_price",
    "uniform_strategy_price",
    "validate_spec",
    "__version__",
]
