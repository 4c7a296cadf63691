"""Optimal cession, optimal loss compensator and value function of the insurer's game.

All time dependence of the optimal strategy enters through the growth
factors ``l_k(t) = exp(t * g_k)`` with

    g_k = int [1 - (1+eta) v_C / v_k]^2 v_k dxi
        = lambda_k - 2 (1+eta) lambda_C + (1+eta)^2 int v_C^2 / v_k dxi.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .compensators import (
    DomainError,
    GammaCompensator,
    ModelEnsemble,
    cross_integral_2,
    density_log,
)

__all__ = [
    "GrowthFactors",
    "MarketParams",
    "OverflowRiskWarning",
    "StrategyModel",
    "alpha_star",
    "beta_star",
    "cession_diagnostic",
    "growth_exponent",
    "load_market",
    "value_function",
]

logger = logging.getLogger(__name__)

EXP_OVERFLOW = 700.0


class OverflowRiskWarning(RuntimeWarning):
    """An exponential growth factor exceeds double precision range."""


@dataclass(frozen=True)
class MarketParams:
    """Contract and preference parameters.

    ``premium_rate`` is the insurer's premium income ``c``; ``safety_loading``
    is the counterparty's markup ``eta``; ``ambiguity_penalty`` is ``theta``.
    The premium-viability condition ``c < (1+eta) int xi nu_C`` depends on the
    counterparty model and is enforced by :meth:`check_viability`.
    """

    premium_rate: float
    safety_loading: float
    ambiguity_penalty: float
    initial_wealth_insurer: float
    initial_wealth_counterparty: float
    horizon: float

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.ambiguity_penalty > 0:
            raise DomainError("ambiguity penalty theta must be positive")
        if not self.horizon > 0:
            raise DomainError("horizon T must be positive")
        if not self.safety_loading >= 0:
            raise DomainError("safety loading eta must be nonnegative")

    # short aliases used throughout the formulas
    @property
    def c(self) -> float:
        return self.premium_rate

    @property
    def eta(self) -> float:
        return self.safety_loading

    @property
    def theta(self) -> float:
        return self.ambiguity_penalty

    @property
    def x0(self) -> float:
        return self.initial_wealth_insurer

    @property
    def y0(self) -> float:
        return self.initial_wealth_counterparty

    @property
    def T(self) -> float:
        return self.horizon

    def check_viability(self, counterparty: GammaCompensator) -> None:
        """Raise if ceding everything would be optimal (``c >= (1+eta) E[loss rate]``)."""
        ceiling = (1.0 + self.eta) * counterparty.loss_rate
        if not self.c < ceiling:
            raise DomainError(
                f"premium rate c={self.c:.12g} is not below (1+eta)*int xi nu_C = {ceiling:.12g}"
            )

    def replace(self, **changes) -> "MarketParams":
        aliases = {"c": "premium_rate", "eta": "safety_loading", "theta": "ambiguity_penalty",
                   "x0": "initial_wealth_insurer", "y0": "initial_wealth_counterparty",
                   "T": "horizon"}
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__}
        for key, value in changes.items():
            kwargs[aliases.get(key, key)] = value
        return MarketParams(**kwargs)

    def to_dict(self) -> dict:
        return {"c": self.c, "eta": self.eta, "theta": self.theta,
                "x0": self.x0, "y0": self.y0, "T": self.T}

    @classmethod
    def from_dict(cls, data: dict) -> "MarketParams":
        missing = [k for k in ("c", "eta", "theta", "x0", "y0", "T") if k not in data]
        if missing:
            raise ValueError(f"market document is missing keys {missing}")
        return cls(premium_rate=data["c"], safety_loading=data["eta"],
                   ambiguity_penalty=data["theta"], initial_wealth_insurer=data["x0"],
                   initial_wealth_counterparty=data["y0"], horizon=data["T"])


def load_market(path) -> MarketParams:
    with open(path) as fh:
        return MarketParams.from_dict(json.load(fh))


def growth_exponent(k: GammaCompensator, C: GammaCompensator, eta: float) -> float:
    """Exponent ``g_k`` of the growth factor ``l_k(t) = exp(t g_k)``."""
    one_eta = 1.0 + eta
    if k == C:
        # exact reduction; avoids cancellation in the general expression
        return C.rate * eta * eta
    g = k.rate - 2.0 * one_eta * C.rate + one_eta**2 * cross_integral_2(C, k)
    # g is an integral of a square; tiny negatives are rounding
    return max(g, 0.0)


@dataclass(frozen=True)
class GrowthFactors:
    """Per-index exponents ``g_k`` in ensemble order ``1..n, C``."""

    exponents: np.ndarray

    def __call__(self, t) -> np.ndarray:
        """``l_k(t)`` for all k; broadcasts over an array of times (last axis = k)."""
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore"):
            return np.exp(t[..., None] * self.exponents)

    def log(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return t[..., None] * self.exponents


class StrategyModel:
    """Precomputed ensemble/market constants shared by every formula.

    Holds ``lambda_k``, ``I2(C,k)``, ``g_k``, the weights, and the aggregate
    counterparty loss rate, so repeated evaluation costs only exponentials.
    """

    def __init__(self, ensemble: ModelEnsemble, market: MarketParams, *, check_viability=True):
        self.ensemble = ensemble
        self.market = market
        if check_viability:
            market.check_viability(ensemble.counterparty)
        C = ensemble.counterparty
        labels = ensemble.labels
        self.C = C
        self.weights = ensemble.all_weights
        self.rates = np.array([m.rate for m in ensemble.all_models])
        self.i2 = np.array([
            C.rate if m == C else cross_integral_2(C, m, labels=("C", lab))
            for lab, m in zip(labels, ensemble.all_models)
        ])
        eta = market.eta
        g = np.array([growth_exponent(m, C, eta) for m in ensemble.all_models])
        self.growth = GrowthFactors(g)
        self.loss_rate = C.loss_rate
        # drift of log Z_k between jumps
        self.log_drift = self.rates - (1.0 + eta) * C.rate
        # constant part of the log jump ratio: ln(1+eta)
        self.log_one_eta = math.log1p(eta)
        big = np.flatnonzero(market.T * g > EXP_OVERFLOW)
        if big.size:
            names = ", ".join(labels[i] for i in big)
            msg = f"l_k(T) overflows double precision for models {names} (T*g_k > {EXP_OVERFLOW:g})"
            warnings.warn(msg, OverflowRiskWarning, stacklevel=2)
            logger.warning(msg)

    @property
    def g(self) -> np.ndarray:
        return self.growth.exponents

    @cached_property
    def labels(self) -> list:
        return self.ensemble.labels

    def log_ratio(self, xi) -> np.ndarray:
        """``ln[(1+eta) v_C(xi) / v_k(xi)]`` for every k; trailing axis indexes k."""
        xi = np.asarray(xi, dtype=float)
        lc = density_log(self.C, xi)
        lk = np.stack([np.broadcast_to(density_log(m, xi), xi.shape)
                       for m in self.ensemble.all_models], axis=-1)
        return self.log_one_eta + np.asarray(lc)[..., None] - lk

    def penalty_weights(self, t) -> np.ndarray:
        """``pi_k l_k(T - t)``; the vector ``p_t`` of the variance formula."""
        return self.weights * self.growth(self.market.T - np.asarray(t, dtype=float))

    def drift_coefficients(self) -> np.ndarray:
        """``int [(1+eta) v_C/v_k - 1] nu_C = (1+eta) I2_k - lambda_C`` per k."""
        return (1.0 + self.market.eta) * self.i2 - self.C.rate


def _check_time(t: float, T: float) -> None:
    if not (0.0 <= t <= T):
        raise DomainError(f"time {t!r} outside [0, {T!r}]")


def _check_z(z, size: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (size,):
        raise ValueError(f"z must have {size} entries (one per index 1..n, C)")
    if np.any(~(z > 0)):
        raise DomainError("auxiliary state z must be strictly positive")
    return z


def _strategy(ensemble, market) -> StrategyModel:
    if isinstance(ensemble, StrategyModel):
        return ensemble
    return StrategyModel(ensemble, market)


def alpha_star(t: float, xi, z, ensemble, market: MarketParams | None = None):
    """Optimal ceded amount for a loss of size ``xi`` at time ``t`` given state ``z``.

    ``alpha* = xi - (1/theta) sum_k pi_k z_k l_k(T-t) [(1+eta) v_C(xi)/v_k(xi) - 1]``.
    The result is not clipped to ``[0, xi]``.
    """
    sm = _strategy(ensemble, market)
    mk = sm.market
    _check_time(t, mk.T)
    z = _check_z(z, sm.ensemble.size)
    xi = np.asarray(xi, dtype=float)
    bracket = np.expm1(sm.log_ratio(xi))
    coef = sm.weights * z * sm.growth(mk.T - t)
    out = xi - (bracket @ coef) / mk.theta
    return float(out) if np.ndim(out) == 0 else out


def cession_diagnostic(t: float, z, ensemble, market: MarketParams | None = None, *,
                       n_points: int = 999) -> dict:
    """Share of losses for which ``alpha*`` leaves ``[0, xi]``.

    Evaluated at the ``n_points`` equally spaced quantiles of the counterparty
    severity law, so each point carries the same loss probability.  Negative
    cessions are admissible; this only reports how often they occur.
    """
    from scipy.stats import gamma as gamma_dist

    sm = _strategy(ensemble, market)
    C = sm.ensemble.counterparty
    q = (np.arange(n_points) + 0.5) / n_points
    xi = gamma_dist.ppf(q, C.shape, scale=C.scale)
    a = np.asarray(alpha_star(t, xi, z, sm))
    return {"time": float(t), "n_points": int(n_points),
            "fraction_negative": float(np.mean(a < 0)),
            "fraction_above_loss": float(np.mean(a > xi)),
            "min_alpha_over_xi": float(np.min(a / xi)),
            "max_alpha_over_xi": float(np.max(a / xi))}


def beta_star(xi, C: GammaCompensator, eta: float):
    """Loss intensity density under the optimal measure, ``(1+eta) v_C(xi)``."""
    return (1.0 + eta) * np.exp(density_log(C, xi))


def value_function(t: float, x: float, z, ensemble, market: MarketParams | None = None) -> float:
    """Candidate value ``J(t, x, z)`` of the insurer's problem."""
    sm = _strategy(ensemble, market)
    mk = sm.market
    _check_time(t, mk.T)
    z = _check_z(z, sm.ensemble.size)
    tau = mk.T - t
    lin = float(np.dot(sm.weights * sm.growth(tau), z))
    return x + (lin - 1.0) / (2.0 * mk.theta) - ((1.0 + mk.eta) * sm.loss_rate - mk.c) * tau
