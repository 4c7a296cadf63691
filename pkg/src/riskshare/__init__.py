"""Robust risk sharing under model ambiguity with Gamma loss compensators."""

from .compensators import (
    AssumptionReport,
    DomainError,
    GammaCompensator,
    InfeasibleModelPairError,
    ModelEnsemble,
    QuadratureError,
    check_assumption_1,
    check_assumption_2,
    cross_integral_2,
    cross_integral_3,
    load_ensemble,
    save_ensemble,
)
from .controls import MarketParams, StrategyModel, alpha_star, beta_star, load_market, value_function

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport",
    "DomainError",
    "GammaCompensator",
    "InfeasibleModelPairError",
    "MarketParams",
    "ModelEnsemble",
    "QuadratureError",
    "StrategyModel",
    "alpha_star",
    "beta_star",
    "check_assumption_1",
    "check_assumption_2",
    "cross_integral_2",
    "cross_integral_3",
    "load_ensemble",
    "load_market",
    "save_ensemble",
    "value_function",
]
