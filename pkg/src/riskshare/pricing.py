"""The counterparty's choice of safety loading.

The counterparty picks ``eta`` to maximize its expected terminal wealth under
its own model, anticipating the insurer's optimal response.  With one model
the optimum has a Lambert-W closed form; in general the objective is scanned
and then refined by golden-section search.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .compensators import DomainError, GammaCompensator, ModelEnsemble
from .controls import MarketParams, StrategyModel
from .moments import expected_counterparty_wealth

__all__ = [
    "BracketShrinkWarning",
    "PricingResult",
    "counterparty_objective",
    "counterparty_objective_derivative",
    "eta_star_one_model",
    "lambert_w0",
    "optimize_eta",
    "theta_sweep",
]

logger = logging.getLogger(__name__)

_INV_E = math.exp(-1.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class BracketShrinkWarning(RuntimeWarning):
    """The search interval was cut back because the objective overflowed."""


def lambert_w0(x: float) -> float:
    """Principal branch of the Lambert W function, ``w e^w = x`` with ``w >= -1``.

    Halley iteration from a branch-point series (near ``-1/e``), ``log1p`` (moderate
    ``x``) or the asymptotic expansion ``L1 - L2 + L2/L1`` (large ``x``).
    """
    x = float(x)
    if math.isnan(x):
        return math.nan
    if x < -_INV_E:
        # allow rounding of -1/e itself
        if x < -_INV_E - 1e-15:
            raise DomainError(f"lambert_w0 is undefined below -1/e (got {x!r})")
        x = -_INV_E
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf
    if x < -0.32:
        p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        if p == 0.0:
            return -1.0
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    elif x <= math.e:
        w = math.log1p(x)
        if x > 0:
            w *= 1.0 - math.log1p(w) / (2.0 + w)
    else:
        l1 = math.log(x)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w_new = w - step
        if abs(step) <= 1e-16 * (1.0 + abs(w_new)):
            return w_new
        w = w_new
    return w


def _one_model_params(model) -> GammaCompensator:
    if isinstance(model, GammaCompensator):
        return model
    if isinstance(model, StrategyModel):
        model = model.ensemble
    if isinstance(model, ModelEnsemble):
        if not model.is_single_model:
            raise DomainError("eta_star_one_model needs a single-model ensemble")
        return model.counterparty
    raise TypeError(f"expected a GammaCompensator or single-model ensemble, got {type(model)!r}")


def eta_star_one_model(model, market: MarketParams) -> float:
    """``eta* = sqrt(W(mu^2 theta^2 lambda T / 2) / (2 lambda T))`` for a single model.

    Solves ``eta exp(eta^2 lambda T) = mu theta / 2`` with ``mu`` the mean severity.
    """
    m = _one_model_params(model)
    lam_T = m.rate * market.T
    mu = m.mean_severity
    w = lambert_w0(0.5 * (mu * market.theta) ** 2 * lam_T)
    return math.sqrt(w / (2.0 * lam_T))


def _strategy(ensemble, market) -> StrategyModel:
    if isinstance(ensemble, StrategyModel):
        return ensemble
    return StrategyModel(ensemble, market, check_viability=False)


def counterparty_objective(eta, ensemble, market: MarketParams):
    """``E^{P_C}[Y_T]`` as a function of the safety loading (vectorized in ``eta``)."""
    return expected_counterparty_wealth(eta, market.T, _strategy(ensemble, market), market)


def counterparty_objective_derivative(eta, ensemble, market: MarketParams):
    """Derivative of :func:`counterparty_objective` in ``eta`` (vectorized)."""
    sm = _strategy(ensemble, market)
    T, theta = market.T, market.theta
    eta = np.asarray(eta, dtype=float)
    lc = sm.C.rate
    e1 = (1.0 + eta)[..., None]
    e = eta[..., None]
    g = np.maximum(sm.rates - 2.0 * e1 * lc + e1**2 * sm.i2, 0.0)
    dg = -2.0 * lc + 2.0 * e1 * sm.i2
    h = e * (lc - e1 * sm.i2)
    dh = lc - (1.0 + 2.0 * e) * sm.i2
    with np.errstate(over="ignore", invalid="ignore"):
        lt = np.exp(T * g)
        eh = np.exp(T * h)
        dterm = lt * (T * dg * (-np.expm1(T * h)) - T * dh * eh)
        terms = np.where(sm.weights > 0, sm.weights * dterm, 0.0)
    out = T * sm.loss_rate - terms.sum(axis=-1) / theta
    return float(out) if out.ndim == 0 else out


@dataclass
class PricingResult:
    """Outcome of the safety-loading search.

    ``scan`` holds the ``(eta, value)`` pairs of the initial grid scan.
    """

    eta_star: float
    expected_wealth: float
    bracket: tuple
    iterations: int
    method: str
    scan: list = field(default_factory=list)
    multimodal: bool = False
    eta_max_used: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "eta_star": self.eta_star,
            "expected_wealth": self.expected_wealth,
            "bracket": list(self.bracket),
            "iterations": self.iterations,
            "method": self.method,
            "multimodal": self.multimodal,
            "eta_max_used": self.eta_max_used,
            "scan": [list(p) for p in self.scan],
        }


def _golden_section(f, lo: float, hi: float, tol: float, max_iter: int = 500) -> tuple:
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns (x, f(x), iterations, bracket)."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x), it, (a, b)


def _polish(df, lo: float, hi: float, x0: float, tol: float = 1e-14) -> float:
    """Bisection on the derivative over the scan cell holding the maximum.

    Function values lose resolution near a maximum (``f(x0 + d) - f(x0)`` is
    second order in ``d``); the derivative is first order, so it pins the
    maximizer to near machine precision when it changes sign on ``[lo, hi]``.
    """
    dlo, dhi = df(lo), df(hi)
    if not (dlo > 0 > dhi):
        return x0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
        if df(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def optimize_eta(ensemble, market: MarketParams, eta_max: float = 1.0, *, n_scan: int = 64,
                 tol: float = 1e-8) -> PricingResult:
    """Maximize ``E^{P_C}[Y_T^eta]`` over ``[0, eta_max]``.

    A ``n_scan``-point grid scan locates the best local maximum; golden-section
    search on its neighbouring grid cell refines it to abscissa tolerance
    ``tol``, and a final bisection on the analytic derivative removes the
    flat-top resolution limit.  Several interior local maxima on the scan set
    ``multimodal``.  If the objective overflows at large ``eta``, the interval
    is shrunk to the finite part with a :class:`BracketShrinkWarning`.
    """
    if not eta_max > 0:
        raise DomainError("eta_max must be positive")
    sm = _strategy(ensemble, market)

    def f(eta):
        return float(counterparty_objective(eta, sm, market))

    def df(eta):
        return float(counterparty_objective_derivative(eta, sm, market))

    grid = np.linspace(0.0, eta_max, n_scan)
    vals = np.asarray(counterparty_objective(grid, sm, market), dtype=float)
    finite = np.isfinite(vals)
    used_max = eta_max
    if not finite.all():
        last = int(np.argmin(finite)) - 1
        if last < 1:
            raise FloatingPointError("counterparty objective overflows immediately above eta = 0")
        used_max = float(grid[last])
        msg = f"objective overflows above eta={used_max:.6g}; search interval shrunk"
        warnings.warn(msg, BracketShrinkWarning, stacklevel=2)
        logger.warning(msg)
        grid = np.linspace(0.0, used_max, n_scan)
        vals = np.asarray(counterparty_objective(grid, sm, market), dtype=float)

    peaks = [i for i in range(n_scan)
             if (i == 0 or vals[i] >= vals[i - 1]) and (i == n_scan - 1 or vals[i] >= vals[i + 1])]
    multimodal = len(peaks) > 1
    if multimodal:
        logger.warning("objective scan shows %d local maxima; refining the best", len(peaks))
    best = max(peaks, key=lambda i: vals[i])
    lo = float(grid[max(best - 1, 0)])
    hi = float(grid[min(best + 1, n_scan - 1)])
    eta, _, iters, _ = _golden_section(f, lo, hi, tol)
    eta = _polish(df, lo, hi, eta)
    eta = min(max(eta, 0.0), used_max)
    return PricingResult(
        eta_star=eta, expected_wealth=f(eta), bracket=(0.0, used_max), iterations=iters,
        method="golden-section", scan=list(zip(grid.tolist(), vals.tolist())),
        multimodal=multimodal, eta_max_used=used_max,
    )


def optimize_eta_one_model(model, market: MarketParams) -> PricingResult:
    """Closed-form optimum for a single model, packaged like :func:`optimize_eta`."""
    m = _one_model_params(model)
    eta = eta_star_one_model(m, market)
    ens = ModelEnsemble.single(m)
    value = float(counterparty_objective(eta, ens, market))
    return PricingResult(eta_star=eta, expected_wealth=value, bracket=(0.0, math.inf),
                         iterations=0, method="closed-form-lambert-w")


def theta_sweep(ensemble, market: MarketParams, thetas: Sequence[float], eta_max: float = 1.0,
                **kwargs) -> list:
    """``(theta, eta*, E^{P_C}[Y_T^{eta*}])`` for each ambiguity penalty in ``thetas``."""
    base = ensemble.ensemble if isinstance(ensemble, StrategyModel) else ensemble
    out = []
    for th in thetas:
        mk = market.replace(theta=float(th))
        res = optimize_eta(base, mk, eta_max, **kwargs)
        out.append((float(th), res.eta_star, res.expected_wealth))
    return out
