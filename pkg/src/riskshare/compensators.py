"""Loss models (compensators), closed-form cross-model integrals and feasibility checks.

A compensator here is the intensity density ``v(xi) = rate * f(xi)`` of a
compound Poisson loss process with Gamma(shape, scale) severities.  Every
ratio integral the optimal strategy needs reduces to a Gamma-function
identity, which we evaluate in log space.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaln

__all__ = [
    "COUNTERPARTY",
    "AssumptionReport",
    "DomainError",
    "GammaCompensator",
    "InfeasibleModelPairError",
    "ModelEnsemble",
    "QuadratureError",
    "check_assumption_1",
    "check_assumption_2",
    "cross_integral_2",
    "cross_integral_3",
    "density",
    "density_log",
    "integrate_positive",
    "load_ensemble",
    "save_ensemble",
]

COUNTERPARTY = "C"

QUAD_TOL = 1e-10


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class InfeasibleModelPairError(ValueError):
    """A ratio integral between two (or three) models diverges."""

    def __init__(self, message: str, indices: tuple = ()):
        super().__init__(message)
        self.indices = indices


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float = math.nan):
        super().__init__(message)
        self.achieved = achieved


@dataclass(frozen=True)
class GammaCompensator:
    """Compound Poisson intensity with Gamma severities.

    Parameters
    ----------
    rate : float
        Expected number of losses per unit time (lambda).
    shape : float
        Gamma shape of a single loss (m).
    scale : float
        Gamma scale of a single loss, in currency units (phi).
    """

    rate: float
    shape: float
    scale: float

    def __post_init__(self):
        for name in ("rate", "shape", "scale"):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def total_mass(self) -> float:
        return self.rate

    @property
    def mean_severity(self) -> float:
        return self.shape * self.scale

    @property
    def loss_rate(self) -> float:
        """Expected aggregate loss per unit time, the integral of xi against nu."""
        return self.rate * self.shape * self.scale

    @property
    def second_moment_rate(self) -> float:
        """Integral of xi**2 against nu; the variance rate of aggregate losses."""
        return self.rate * self.shape * (self.shape + 1.0) * self.scale**2

    def log_density(self, xi):
        return density_log(self, xi)

    def density(self, xi):
        return density(self, xi)

    def to_dict(self) -> dict:
        return {"rate": self.rate, "shape": self.shape, "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict) -> "GammaCompensator":
        try:
            return cls(rate=data["rate"], shape=data["shape"], scale=data["scale"])
        except KeyError as exc:
            raise ValueError(f"model entry is missing key {exc.args[0]!r}") from None


def density_log(model: GammaCompensator, xi):
    """Natural log of the compensator density ``v(xi)``; vectorized over ``xi``."""
    arr = np.asarray(xi, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("density is only defined for xi > 0")
    out = (
        math.log(model.rate)
        + (model.shape - 1.0) * np.log(arr)
        - arr / model.scale
        - gammaln(model.shape)
        - model.shape * math.log(model.scale)
    )
    return float(out) if np.ndim(out) == 0 else out


def density(model: GammaCompensator, xi):
    return np.exp(density_log(model, xi))


@dataclass(frozen=True)
class ModelEnsemble:
    """Reference models ``P_1..P_n`` plus the counterparty model ``P_C``.

    Index convention: model ``k`` (1-based) is ``models[k-1]``; the counterparty
    is addressed by :data:`COUNTERPARTY`.  Internally the counterparty is the
    last entry of :attr:`all_models`, matching the ordering ``1..n, C``.
    """

    models: tuple
    counterparty: GammaCompensator
    weights: tuple
    weight_counterparty: float = 0.0
    _all_weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        models = tuple(self.models)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(weights) != len(models):
            raise ValueError(
                f"got {len(weights)} weights for {len(models)} models"
            )
        allw = np.append(weights, float(self.weight_counterparty))
        if np.any(allw < 0) or np.any(allw > 1 + 1e-12) or not np.all(np.isfinite(allw)):
            raise ValueError("weights must lie in [0, 1]")
        total = allw.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        allw = allw / total
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "weights", tuple(float(w) for w in allw[:-1]))
        object.__setattr__(self, "weight_counterparty", float(allw[-1]))
        object.__setattr__(self, "_all_weights", allw)

    @classmethod
    def single(cls, model: GammaCompensator) -> "ModelEnsemble":
        """One-model ensemble: the insurer and counterparty share ``model``."""
        return cls(models=(), counterparty=model, weights=(), weight_counterparty=1.0)

    @classmethod
    def uniform(cls, models: Sequence[GammaCompensator], counterparty: GammaCompensator):
        n = len(models)
        return cls(models=tuple(models), counterparty=counterparty,
                   weights=tuple([1.0 / n] * n), weight_counterparty=0.0)

    @property
    def n_models(self) -> int:
        return len(self.models)

    @property
    def size(self) -> int:
        """Number of indices including the counterparty."""
        return len(self.models) + 1

    @property
    def all_models(self) -> tuple:
        return self.models + (self.counterparty,)

    @property
    def all_weights(self) -> np.ndarray:
        return self._all_weights.copy()

    @property
    def labels(self) -> list:
        return [str(k) for k in range(1, self.n_models + 1)] + [COUNTERPARTY]

    @property
    def is_single_model(self) -> bool:
        return self.n_models == 0 or all(m == self.counterparty for m in self.models)

    def position(self, index) -> int:
        """Position in :attr:`all_models` of a model index (1-based int or ``"C"``)."""
        if index == COUNTERPARTY or (isinstance(index, str) and index.upper() == COUNTERPARTY):
            return self.n_models
        k = int(index)
        if not 1 <= k <= self.n_models:
            raise IndexError(f"model index {index!r} outside 1..{self.n_models}")
        return k - 1

    def model(self, index) -> GammaCompensator:
        return self.all_models[self.position(index)]

    def label(self, position: int) -> str:
        return self.labels[position]

    def to_dict(self) -> dict:
        return {
            "models": [m.to_dict() for m in self.models],
            "counterparty": self.counterparty.to_dict(),
            "weights": list(self.weights),
            "weight_counterparty": self.weight_counterparty,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelEnsemble":
        missing = [k for k in ("models", "counterparty", "weights") if k not in data]
        if missing:
            raise ValueError(f"ensemble document is missing keys {missing}")
        return cls(
            models=tuple(GammaCompensator.from_dict(m) for m in data["models"]),
            counterparty=GammaCompensator.from_dict(data["counterparty"]),
            weights=tuple(data["weights"]),
            weight_counterparty=float(data.get("weight_counterparty", 0.0)),
        )


def load_ensemble(path) -> ModelEnsemble:
    with open(path) as fh:
        return ModelEnsemble.from_dict(json.load(fh))


def save_ensemble(ensemble: ModelEnsemble, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(ensemble.to_dict(), indent=2) + "\n")
    return path


def _log_gamma_ratio_integral(log_const: float, a: float, b: float) -> float:
    """log of ``exp(log_const) * int_0^inf xi**(a-1) exp(-b xi) dxi``."""
    return log_const + gammaln(a) - a * math.log(b)


def cross_integral_2(C: GammaCompensator, k: GammaCompensator, *, labels=("C", "k")) -> float:
    """``int v_C(xi)**2 / v_k(xi) dxi`` in closed form.

    The integrand is a rescaled Gamma kernel with shape ``2 m_C - m_k`` and
    rate ``2/phi_C - 1/phi_k``; both must be positive.
    """
    a = 2.0 * C.shape - k.shape
    b = 2.0 / C.scale - 1.0 / k.scale
    if not (a > 0 and 2.0 * k.scale > C.scale):
        raise InfeasibleModelPairError(
            f"int v_{labels[0]}^2/v_{labels[1]} diverges: need 2*m_C > m_k "
            f"({2 * C.shape:.6g} vs {k.shape:.6g}) and 2*phi_k > phi_C "
            f"({2 * k.scale:.6g} vs {C.scale:.6g})",
            indices=labels,
        )
    log_const = (
        2.0 * math.log(C.rate) - math.log(k.rate)
        + gammaln(k.shape) + k.shape * math.log(k.scale)
        - 2.0 * gammaln(C.shape) - 2.0 * C.shape * math.log(C.scale)
    )
    return math.exp(_log_gamma_ratio_integral(log_const, a, b))


def cross_integral_3(C: GammaCompensator, j: GammaCompensator, k: GammaCompensator,
                     *, labels=("C", "j", "k")) -> float:
    """``int v_C(xi)**3 / (v_j(xi) v_k(xi)) dxi`` in closed form."""
    a = 3.0 * C.shape - j.shape - k.shape
    b = 3.0 / C.scale - 1.0 / j.scale - 1.0 / k.scale
    if not (a > 0 and 3.0 * j.scale * k.scale > C.scale * (j.scale + k.scale)):
        raise InfeasibleModelPairError(
            f"int v_{labels[0]}^3/(v_{labels[1]} v_{labels[2]}) diverges: need "
            f"3*m_C > m_j + m_k and 3*phi_j*phi_k > phi_C*(phi_j + phi_k)",
            indices=labels,
        )
    log_const = (
        3.0 * math.log(C.rate) - math.log(j.rate) - math.log(k.rate)
        + gammaln(j.shape) + j.shape * math.log(j.scale)
        + gammaln(k.shape) + k.shape * math.log(k.scale)
        - 3.0 * gammaln(C.shape) - 3.0 * C.shape * math.log(C.scale)
    )
    return math.exp(_log_gamma_ratio_integral(log_const, a, b))


@dataclass
class AssumptionReport:
    """Outcome of a feasibility check.

    ``entries`` holds one tuple per checked index combination:
    ``(indices, shape_ok, scale_ok)``.
    """

    name: str
    entries: list

    @property
    def passed(self) -> bool:
        return all(s and c for _, s, c in self.entries)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not (e[1] and e[2])]

    def result_for(self, *indices) -> tuple:
        for idx, s, c in self.entries:
            if idx == tuple(indices):
                return s, c
        raise KeyError(indices)

    def to_dict(self) -> dict:
        return {
            "assumption": self.name,
            "passed": self.passed,
            "checks": [
                {"indices": list(idx), "shape_ok": s, "scale_ok": c, "passed": s and c}
                for idx, s, c in self.entries
            ],
        }


def check_assumption_1(ensemble: ModelEnsemble) -> AssumptionReport:
    """Square-integrability of ``v_C / v_k`` against ``v_k`` for every index."""
    C = ensemble.counterparty
    entries = []
    for label, m in zip(ensemble.labels, ensemble.all_models):
        entries.append(((label,), 2 * C.shape > m.shape, 2 * m.scale > C.scale))
    return AssumptionReport("assumption_1", entries)


def check_assumption_2(ensemble: ModelEnsemble) -> AssumptionReport:
    """Integrability of ``v_C**3 / (v_j v_k)`` over all ordered pairs, C included."""
    C = ensemble.counterparty
    labels = ensemble.labels
    models = ensemble.all_models
    entries = []
    for lj, mj in zip(labels, models):
        for lk, mk in zip(labels, models):
            shape_ok = 3 * C.shape > mj.shape + mk.shape
            scale_ok = 3 * mj.scale * mk.scale > C.scale * (mj.scale + mk.scale)
            entries.append(((lj, lk), shape_ok, scale_ok))
    return AssumptionReport("assumption_2", entries)


def integrate_positive(func: Callable[[float], float], *, scale: float = 1.0,
                       tol: float = QUAD_TOL, limit: int = 500,
                       points: Sequence[float] = ()) -> float:
    """Adaptive Gauss-Kronrod integral of ``func`` over ``(0, inf)``.

    Maps the half line onto ``(0, 1)`` with ``xi = scale * u / (1 - u)``; the
    optional ``scale`` puts the bulk of a Gamma-like integrand near ``u = 1/2``.
    ``points`` lists abscissae in ``xi`` where the integrand has kinks or jumps.
    Raises :class:`QuadratureError` when QUADPACK reports non-convergence.
    """

    def mapped(u):
        if u <= 0.0 or u >= 1.0:
            return 0.0
        one_minus = 1.0 - u
        xi = scale * u / one_minus
        val = func(xi) * scale / (one_minus * one_minus)
        return val if math.isfinite(val) else 0.0

    brk = sorted(p / (scale + p) for p in points if p > 0)
    kw = dict(epsabs=tol, epsrel=tol, limit=limit, points=brk or None)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, err = integrate.quad(mapped, 0.0, 1.0, **kw)
        except integrate.IntegrationWarning as exc:
            value, err = integrate.quad(mapped, 0.0, 1.0, full_output=1, **kw)[:2]
            if not err <= max(1e3 * tol, 1e3 * tol * abs(value)):
                raise QuadratureError(f"quadrature did not converge: {exc}", achieved=err) from None
    return value
