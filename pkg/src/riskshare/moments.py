"""Closed-form moments of the auxiliary processes, the insurer's and the counterparty's wealth.

Measures are written as tags: ``"Q*"`` for the optimal measure, ``"P_C"`` for
the counterparty model, ``"P_k"`` (``k`` a 1-based model index) for a
reference model.  Only moments with a known closed form are provided; every
other cross-measure quantity is left to Monte Carlo.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .compensators import (
    COUNTERPARTY,
    GammaCompensator,
    InfeasibleModelPairError,
    ModelEnsemble,
    check_assumption_2,
    cross_integral_3,
)
from .controls import DomainError, MarketParams, StrategyModel

__all__ = [
    "Measure",
    "MomentReport",
    "OneModelMoments",
    "UnavailableMomentError",
    "cov_Z_Qstar",
    "cov_Z_matrix_Qstar",
    "expected_counterparty_wealth",
    "mean_X",
    "mean_X_cl",
    "mean_Y",
    "mean_Z",
    "moment_report",
    "one_model_moments",
    "var_X_Qstar",
    "var_X_cl",
]

logger = logging.getLogger(__name__)


class UnavailableMomentError(ValueError):
    """No closed form is available for this moment under this measure."""


class LargeExponentWarning(RuntimeWarning):
    """A moment exponential overflowed to +inf."""


@dataclass(frozen=True)
class Measure:
    """Measure tag.  ``index`` is ``None`` for Q*, else a model index or ``"C"``."""

    index: object = None

    @classmethod
    def parse(cls, tag) -> "Measure":
        if isinstance(tag, Measure):
            return tag
        if isinstance(tag, int):
            return cls(tag)
        s = str(tag).strip()
        if s.upper() in ("Q*", "Q", "QSTAR", "Q_STAR"):
            return cls(None)
        if s.upper().startswith("P_"):
            s = s[2:]
        elif s.upper().startswith("P") and len(s) > 1:
            s = s[1:]
        if s.upper() == COUNTERPARTY:
            return cls(COUNTERPARTY)
        try:
            return cls(int(s))
        except ValueError:
            raise ValueError(f"unrecognised measure tag {tag!r}") from None

    @property
    def is_qstar(self) -> bool:
        return self.index is None

    @property
    def is_counterparty(self) -> bool:
        return self.index == COUNTERPARTY

    def __str__(self) -> str:
        return "Q*" if self.index is None else f"P_{self.index}"


def _exp(value, what=""):
    with np.errstate(over="ignore"):
        out = np.exp(value)
    if np.any(np.isinf(out)):
        msg = f"exponential overflow in {what or 'moment'}"
        warnings.warn(msg, LargeExponentWarning, stacklevel=3)
        logger.warning(msg)
    return out


def _sm(ensemble, market) -> StrategyModel:
    if isinstance(ensemble, StrategyModel):
        return ensemble
    return StrategyModel(ensemble, market)


def _check_t(t, T):
    if not 0.0 <= t <= T:
        raise DomainError(f"time {t!r} outside [0, {T!r}]")


def _pc_log_mean_Z(sm: StrategyModel) -> np.ndarray:
    """Per-unit-time exponent of ``E^{P_C}[Z_k]``."""
    eta = sm.market.eta
    lc = sm.C.rate
    return sm.rates - (2.0 + eta) * lc + (1.0 + eta) * sm.i2


def mean_Z(measure, k, t: float, ensemble, market: Optional[MarketParams] = None) -> float:
    """Expected auxiliary process ``Z*_k(t)``."""
    sm = _sm(ensemble, market)
    _check_t(t, sm.market.T)
    meas = Measure.parse(measure)
    pos = sm.ensemble.position(k)
    label = sm.labels[pos]
    if meas.is_qstar:
        return float(_exp(t * sm.g[pos], "E^Q*[Z]"))
    if str(meas.index) == label:
        return 1.0
    if meas.is_counterparty:
        return float(_exp(t * _pc_log_mean_Z(sm)[pos], "E^P_C[Z]"))
    raise UnavailableMomentError(
        f"E^{meas}[Z_{label}] has no closed form here; simulate under {meas} instead"
    )


def mean_Z_vector(measure, t: float, ensemble, market=None) -> np.ndarray:
    sm = _sm(ensemble, market)
    return np.array([mean_Z(measure, lab, t, sm) for lab in sm.labels])


def mean_X(measure, t: float, ensemble, market: Optional[MarketParams] = None) -> float:
    """Expected optimal insurer wealth ``X*_t`` under Q* or P_C."""
    sm = _sm(ensemble, market)
    mk = sm.market
    _check_t(t, mk.T)
    meas = Measure.parse(measure)
    base = mk.x0 + (mk.c - (1.0 + mk.eta) * sm.loss_rate) * t
    if meas.is_qstar:
        return base
    if meas.is_counterparty or sm.ensemble.is_single_model and meas.index in (1, COUNTERPARTY):
        return base + _pc_penalty_term(sm, mk.eta, t)
    raise UnavailableMomentError(f"E^{meas}[X*] has no closed form; simulate instead")


def _pc_penalty_term(sm: StrategyModel, eta: float, t: float) -> float:
    """``(1/theta) sum_k pi_k l_k(T) [1 - exp(t eta (lambda_C - (1+eta) I2_k))]``."""
    mk = sm.market
    lt = _exp(mk.T * sm.g, "l_k(T)")
    inner = -np.expm1(t * eta * (sm.C.rate - (1.0 + eta) * sm.i2))
    terms = np.where(sm.weights > 0, sm.weights * lt * inner, 0.0)
    return float(terms.sum() / mk.theta)


def _measure_model(sm: StrategyModel, meas: Measure) -> tuple:
    """(intensity, severity model) of the loss process under ``meas``."""
    if meas.is_qstar:
        return (1.0 + sm.market.eta) * sm.C.rate, sm.C
    m = sm.ensemble.model(meas.index)
    return m.rate, m


def mean_X_cl(measure, t: float, ensemble, market=None) -> float:
    """Expected wealth without risk sharing, ``x + c t - E[aggregate loss]``."""
    sm = _sm(ensemble, market)
    rate, m = _measure_model(sm, Measure.parse(measure))
    return sm.market.x0 + sm.market.c * t - rate * m.mean_severity * t


def var_X_cl(measure, t: float, ensemble, market=None) -> float:
    """Variance of the compound Poisson aggregate loss up to ``t``."""
    sm = _sm(ensemble, market)
    rate, m = _measure_model(sm, Measure.parse(measure))
    return rate * m.shape * (m.shape + 1.0) * m.scale**2 * t


def cov_Z_Qstar(j, k, t: float, ensemble, market: Optional[MarketParams] = None) -> float:
    """Covariance of ``Z*_j(t)`` and ``Z*_k(t)`` under the optimal measure."""
    sm = _sm(ensemble, market)
    _check_t(t, sm.market.T)
    pj, pk = sm.ensemble.position(j), sm.ensemble.position(k)
    return float(_cov_entry(sm, pj, pk, t))


def _log_second_moment_Qstar(sm: StrategyModel, pj: int, pk: int) -> float:
    eta = sm.market.eta
    models = sm.ensemble.all_models
    labels = sm.labels
    i3 = cross_integral_3(sm.C, models[pj], models[pk], labels=("C", labels[pj], labels[pk]))
    return (sm.rates[pj] + sm.rates[pk] - 3.0 * (1.0 + eta) * sm.C.rate
            + (1.0 + eta) ** 3 * i3)


def _cov_entry(sm, pj, pk, t):
    # exp(t a) - exp(t b) = exp(t b) * expm1(t (a - b)), accurate as t -> 0
    a = _log_second_moment_Qstar(sm, pj, pk)
    b = sm.g[pj] + sm.g[pk]
    return _exp(t * b, "Cov^Q*(Z)") * np.expm1(t * (a - b))


def cov_Z_matrix_Qstar(t: float, ensemble, market=None) -> np.ndarray:
    """Dense Q*-covariance matrix of ``(Z*_1, ..., Z*_n, Z*_C)`` at time ``t``."""
    sm = _sm(ensemble, market)
    _check_t(t, sm.market.T)
    n = sm.ensemble.size
    cov = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            cov[a, b] = cov[b, a] = _cov_entry(sm, a, b, t)
    return cov


def var_X_Qstar(t: float, ensemble, market: Optional[MarketParams] = None) -> float:
    """Variance of ``X*_t`` under Q*: ``p_t' Sigma p_t / theta**2``."""
    sm = _sm(ensemble, market)
    _check_t(t, sm.market.T)
    report = check_assumption_2(sm.ensemble)
    if not report.passed:
        bad = report.failures[0][0]
        raise InfeasibleModelPairError(
            f"covariance of Z* undefined: assumption 2 fails for pair {bad}", indices=bad)
    p = sm.penalty_weights(t)
    active = np.flatnonzero(sm.weights > 0)
    if active.size == 0:
        return 0.0
    sub = np.empty((active.size, active.size))
    for a, pa in enumerate(active):
        for b in range(a, active.size):
            sub[a, b] = sub[b, a] = _cov_entry(sm, pa, active[b], t)
    pa = p[active]
    return float(pa @ sub @ pa) / sm.market.theta**2


def expected_counterparty_wealth(eta, t: float, ensemble, market: MarketParams):
    """``E^{P_C}[Y_t]`` as a function of the safety loading ``eta`` (vectorized).

    The market's own ``eta`` is ignored; the cross integrals do not depend on it.
    """
    if isinstance(ensemble, StrategyModel):
        sm = ensemble
    else:
        sm = StrategyModel(ensemble, market, check_viability=False)
    mk = market
    eta = np.asarray(eta, dtype=float)
    lc = sm.C.rate
    e1 = (1.0 + eta)[..., None]
    g = np.maximum(sm.rates - 2.0 * e1 * lc + e1**2 * sm.i2, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        lt = np.exp(mk.T * g)
        inner = -np.expm1(t * eta[..., None] * (lc - e1 * sm.i2))
        terms = np.where(sm.weights > 0, sm.weights * lt * inner, 0.0)
    out = mk.y0 + t * eta * sm.loss_rate - terms.sum(axis=-1) / mk.theta
    return float(out) if out.ndim == 0 else out


def mean_Y(t: float, eta: float, ensemble, market: MarketParams, measure="P_C") -> float:
    """Expected counterparty wealth at time ``t`` when the safety loading is ``eta``."""
    _check_t(t, market.T)
    meas = Measure.parse(measure)
    if meas.is_qstar:
        # Y is a Q*-martingale
        return market.y0
    if not meas.is_counterparty:
        raise UnavailableMomentError(f"E^{meas}[Y] has no closed form; simulate instead")
    sm = StrategyModel(ensemble.ensemble if isinstance(ensemble, StrategyModel) else ensemble,
                       market.replace(eta=eta), check_viability=False)
    return float(expected_counterparty_wealth(eta, t, sm, market))


@dataclass
class MomentReport:
    """Analytic moments at one time under one measure.  Unknown entries are ``None``."""

    measure: str
    time: float
    labels: list
    mean_Z: Optional[list]
    mean_X: Optional[float]
    cov_Z: Optional[list]
    var_X: Optional[float]
    mean_Y: Optional[float] = None
    mean_X_cl: Optional[float] = None
    var_X_cl: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def moment_report(measure, t: float, ensemble, market, include_Y=True) -> MomentReport:
    """Collect every closed-form moment available under ``measure``."""
    sm = _sm(ensemble, market)
    meas = Measure.parse(measure)
    _check_t(t, sm.market.T)
    try:
        mz = mean_Z_vector(meas, t, sm).tolist()
    except UnavailableMomentError:
        mz = None
    try:
        mx = mean_X(meas, t, sm)
    except UnavailableMomentError:
        mx = None
    cov = vx = None
    if meas.is_qstar:
        cov_m = cov_Z_matrix_Qstar(t, sm)
        _check_psd(cov_m)
        cov = cov_m.tolist()
        vx = var_X_Qstar(t, sm)
    my = None
    if include_Y and (meas.is_qstar or meas.is_counterparty):
        my = mean_Y(t, sm.market.eta, sm.ensemble, sm.market, measure=meas)
    return MomentReport(
        measure=str(meas), time=float(t), labels=list(sm.labels), mean_Z=mz, mean_X=mx,
        cov_Z=cov, var_X=vx, mean_Y=my,
        mean_X_cl=mean_X_cl(meas, t, sm), var_X_cl=var_X_cl(meas, t, sm),
    )


def _check_psd(cov: np.ndarray) -> None:
    if not np.all(np.isfinite(cov)):
        return
    lo = np.linalg.eigvalsh(cov).min()
    if lo < -1e-8 * max(np.trace(cov), 0.0):
        warnings.warn(f"covariance matrix not PSD (min eigenvalue {lo:.3e})", RuntimeWarning,
                      stacklevel=3)


@dataclass
class OneModelMoments:
    """Closed-form moments of the single-reference-model case at time ``t``."""

    time: float
    mean_Z_P: float
    mean_Z_Q: float
    mean_X_P: float
    mean_X_Q: float
    var_Z_P: float
    var_Z_Q: float
    var_X_P: float
    var_X_Q: float
    cov_XZ_P: float
    cov_XZ_Q: float
    corr_XZ_P: float = field(default=-1.0)
    corr_XZ_Q: float = field(default=-1.0)

    def to_dict(self) -> dict:
        return asdict(self)


def one_model_moments(t: float, model, market: MarketParams) -> OneModelMoments:
    """The full table of one-model moments of ``Z*`` and ``X*`` under P and Q*."""
    if isinstance(model, ModelEnsemble):
        if not model.is_single_model:
            raise ValueError("one_model_moments needs a single-model ensemble; "
                             "use mean_Z / mean_X / cov_Z_Qstar for ensembles")
        model = model.counterparty
    if not isinstance(model, GammaCompensator):
        raise TypeError("model must be a GammaCompensator or single-model ensemble")
    if not 0.0 < t <= market.T:
        raise DomainError(f"time {t!r} outside (0, {market.T!r}]")
    lam, eta, th, T = model.rate, market.eta, market.theta, market.T
    k = lam * eta * eta
    drift = market.c - (1.0 + eta) * model.loss_rate
    em1_p = math.expm1(k * t)
    em1_q = math.expm1(k * (1.0 + eta) * t)
    return OneModelMoments(
        time=float(t),
        mean_Z_P=1.0,
        mean_Z_Q=math.exp(k * t),
        mean_X_P=market.x0 + drift * t + math.exp(k * T) * -math.expm1(-k * t) / th,
        mean_X_Q=market.x0 + drift * t,
        var_Z_P=em1_p,
        var_Z_Q=math.exp(2 * k * t) * em1_q,
        var_X_P=math.exp(2 * k * (T - t)) * em1_p / th**2,
        var_X_Q=math.exp(2 * k * T) * em1_q / th**2,
        cov_XZ_P=-math.exp(k * (T - t)) * em1_p / th,
        cov_XZ_Q=-math.exp(k * (T + t)) * em1_q / th,
    )
