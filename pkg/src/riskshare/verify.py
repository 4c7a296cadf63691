"""Numerical check of the saddle-point conditions satisfied by the candidate value function.

For the candidate ``J`` and controls ``(alpha*, beta*)`` the generator must
satisfy

* ``A^{alpha, beta*} J = 0`` for every admissible cession ``alpha``, and
* ``A^{alpha*, beta} J >= 0`` for every admissible compensator ``beta``,
  with equality only at ``beta = beta*``.

Both are evaluated by quadrature.  The first is computed straight from the
definition of the generator (time derivative of ``J`` in closed form, every
``xi``-integral by quadrature), so it tests the closed-form growth exponents
and the cession formula against independent numerics.  The second is computed
from its reduced squared form and, separately, from the general reduced
expression of the generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .compensators import density_log, integrate_positive
from .controls import MarketParams, StrategyModel, _check_time, _check_z

__all__ = [
    "AdmissibilityError",
    "ControlPerturbation",
    "VerificationEntry",
    "generator_reduced",
    "random_alpha_perturbations",
    "random_beta_perturbations",
    "residual_alpha_fixed",
    "residual_alpha_fixed_closed_form",
    "residual_beta_fixed",
    "scaled_distance",
    "verification_report",
]

ALPHA_FAMILIES = ("optimal", "zero", "indicator", "proportional", "excess", "smooth")
BETA_FAMILIES = ("optimal", "scaled", "gamma_bump", "tilt")

# quadrature tolerance for residuals; an order of magnitude or more below the
# 1e-8 residual tolerance
RESIDUAL_QUAD_TOL = 1e-12


class AdmissibilityError(ValueError):
    """A perturbed control leaves the admissible class (a defining integral diverges)."""


@dataclass(frozen=True)
class ControlPerturbation:
    """A parametric cession (``kind="alpha"``) or loss compensator (``kind="beta"``).

    Alpha families, with ``a*`` the optimal cession:

    ``optimal``       a*
    ``zero``          0 (no sharing)
    ``indicator``     a* + eps * 1{xi < b}
    ``proportional``  s * xi
    ``excess``        (xi - d)_+
    ``smooth``        a* + eps * exp(-xi / b)

    Beta families, with ``b* = (1+eta) v_C``:

    ``optimal``       b*
    ``scaled``        s * b*
    ``gamma_bump``    b* + eps * rate * Gamma(shape, scale) density, eps > 0
    ``tilt``          b* * exp(eps * (xi / mu_C - 1)), mu_C the mean of v_C
    """

    kind: str
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        families = {"alpha": ALPHA_FAMILIES, "beta": BETA_FAMILIES}.get(self.kind)
        if families is None:
            raise ValueError(f"perturbation kind must be 'alpha' or 'beta', got {self.kind!r}")
        if self.family not in families:
            raise ValueError(f"unknown {self.kind} family {self.family!r}")
        p = self.params
        if self.family == "scaled" and not p.get("s", 0) > 0:
            raise AdmissibilityError("scaled compensator needs s > 0")
        if self.family == "gamma_bump":
            if not p.get("eps", 0) > 0:
                raise AdmissibilityError("Gamma bump needs eps > 0 to keep beta positive")
            if not (p.get("shape", 0) > 0 and p.get("scale", 0) > 0):
                raise AdmissibilityError("Gamma bump needs positive shape and scale")
        if self.family in ("indicator", "smooth") and not p.get("b", 0) > 0:
            raise ValueError(f"{self.family} bump needs b > 0")

    def describe(self) -> str:
        args = ", ".join(f"{k}={v:.6g}" for k, v in sorted(self.params.items()))
        return f"{self.kind}:{self.family}({args})"

    def breakpoints(self) -> tuple:
        if self.family == "indicator":
            return (self.params["b"],)
        if self.family == "excess":
            return (self.params["d"],)
        return ()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "family": self.family, "params": dict(self.params),
                "description": self.describe()}


@dataclass
class _Point:
    """State ``(t, x, z)`` plus the constants the integrands need."""

    sm: StrategyModel
    t: float
    x: float
    z: np.ndarray

    def __post_init__(self):
        mk = self.sm.market
        self.coef = self.sm.weights * self.z * self.sm.growth(mk.T - self.t) / (2.0 * mk.theta)
        self.mu_C = self.sm.C.mean_severity

    def log_vk(self, xi: float) -> np.ndarray:
        return np.array([float(density_log(m, xi)) for m in self.sm.ensemble.all_models])

    def log_beta_star(self, xi: float) -> float:
        return self.sm.log_one_eta + float(density_log(self.sm.C, xi))

    def log_ratio(self, xi: float) -> np.ndarray:
        return self.sm.log_one_eta + float(density_log(self.sm.C, xi)) - self.log_vk(xi)

    def alpha_star(self, xi: float, log_w: float = 0.0) -> float:
        """``alpha*(xi) * exp(log_w)``, formed without overflow in the tails."""
        w = math.exp(log_w)
        scaled = np.exp(self.log_ratio(xi) + log_w) - w
        return xi * w - 2.0 * float(np.dot(self.coef, scaled))


def _log_gamma_density(xi: float, rate: float, shape: float, scale: float) -> float:
    return (math.log(rate) + (shape - 1.0) * math.log(xi) - xi / scale
            - gammaln(shape) - shape * math.log(scale))


def _alpha(pert: ControlPerturbation, pt: _Point) -> Callable[[float, float], float]:
    """Return ``a(xi, log_w) = alpha(xi) * exp(log_w)``."""
    p = pert.params
    fam = pert.family
    if fam == "optimal":
        return pt.alpha_star
    if fam == "zero":
        return lambda xi, lw=0.0: 0.0
    if fam == "indicator":
        return lambda xi, lw=0.0: (pt.alpha_star(xi, lw)
                                   + (p["eps"] * math.exp(lw) if xi < p["b"] else 0.0))
    if fam == "proportional":
        return lambda xi, lw=0.0: p["s"] * xi * math.exp(lw)
    if fam == "excess":
        return lambda xi, lw=0.0: max(xi - p["d"], 0.0) * math.exp(lw)
    if fam == "smooth":
        return lambda xi, lw=0.0: pt.alpha_star(xi, lw) + p["eps"] * math.exp(lw - xi / p["b"])
    raise AssertionError(fam)


def _log_abs_expm1(y: float) -> float:
    """``ln|e^y - 1|`` without overflow for large ``y``."""
    if y > 0:
        return y + math.log(-math.expm1(-y))
    return math.log(-math.expm1(y)) if y < 0 else -math.inf


def _check_beta_admissible(pert: ControlPerturbation, sm: StrategyModel) -> None:
    """Sufficient conditions for ``int beta^2 / v_k < inf`` for every model k."""
    p = pert.params
    models = sm.ensemble.all_models
    C = sm.C
    if pert.family == "gamma_bump":
        for lab, m in zip(sm.labels, models):
            if not (2.0 * p["shape"] > m.shape and 2.0 / p["scale"] > 1.0 / m.scale):
                raise AdmissibilityError(
                    f"Gamma bump (shape={p['shape']:.6g}, scale={p['scale']:.6g}) is not square "
                    f"integrable against model {lab}: needs 2*shape > {m.shape:.6g} and "
                    f"scale < {2.0 * m.scale:.6g}"
                )
    elif pert.family == "tilt":
        for lab, m in zip(sm.labels, models):
            rate = 2.0 / C.scale - 1.0 / m.scale - 2.0 * p["eps"] / C.mean_severity
            if not rate > 0:
                raise AdmissibilityError(
                    f"tilted compensator eps={p['eps']:.6g} is too heavy-tailed for model {lab}"
                )


def _log_beta_gap(pert: ControlPerturbation, pt: _Point, xi: float) -> tuple:
    """``(ln beta(xi), sign(beta - beta*), ln|beta - beta*|)``, stable in the tails."""
    p = pert.params
    lb = pt.log_beta_star(xi)
    fam = pert.family
    if fam == "optimal":
        return lb, 0.0, -math.inf
    if fam == "scaled":
        s = p["s"]
        if s == 1.0:
            return lb, 0.0, -math.inf
        return lb + math.log(s), math.copysign(1.0, s - 1.0), lb + math.log(abs(s - 1.0))
    if fam == "gamma_bump":
        lbump = math.log(p["eps"]) + _log_gamma_density(xi, p.get("rate", 1.0), p["shape"],
                                                        p["scale"])
        return np.logaddexp(lb, lbump), 1.0, lbump
    if fam == "tilt":
        e = p["eps"] * (xi / pt.mu_C - 1.0)
        if e == 0.0:
            return lb, 0.0, -math.inf
        return lb + e, math.copysign(1.0, e), lb + _log_abs_expm1(e)
    raise AssertionError(fam)


def _point(sm: StrategyModel, t: float, x: float, z) -> _Point:
    _check_time(t, sm.market.T)
    if z is None:
        z = np.ones(sm.ensemble.size)
    return _Point(sm, float(t), float(x), _check_z(z, sm.ensemble.size))


def _sm(ensemble, market) -> StrategyModel:
    return ensemble if isinstance(ensemble, StrategyModel) else StrategyModel(ensemble, market)


def _quad(func, pt: _Point, points=(), tol=RESIDUAL_QUAD_TOL) -> float:
    return integrate_positive(func, scale=pt.mu_C, tol=tol, points=points, limit=1000)


def residual_beta_fixed(alpha: ControlPerturbation, t: float, x: float, z, ensemble,
                        market: Optional[MarketParams] = None) -> float:
    """``A^{alpha, beta*} J(t, x, z)`` from the definition of the generator.

    ``J_t`` is differentiated in closed form; the premium flow, the expected
    ceded-loss drift, the drift of each ``Z_k`` and the compensated jump term
    are separate quadratures.  The result should vanish for every ``alpha``.
    """
    if alpha.kind != "alpha":
        raise ValueError("residual_beta_fixed takes an alpha perturbation")
    sm = _sm(ensemble, market)
    pt = _point(sm, t, x, z)
    mk = sm.market
    a = _alpha(alpha, pt)
    brk = alpha.breakpoints()
    C = sm.C
    one_eta = 1.0 + mk.eta
    n = sm.ensemble.size

    # dJ/dt = -sum_k coef_k g_k + (1+eta) L - c ; dJ/dx = 1 ; dJ/dz_k = coef_k
    dJ_dt = -float(np.dot(pt.coef, sm.g)) + one_eta * sm.loss_rate - mk.c

    def lv_C(xi):
        return float(density_log(C, xi))

    premium_flow = one_eta * _quad(lambda xi: a(xi, lv_C(xi)), pt, brk)
    retained = one_eta * _quad(lambda xi: xi * math.exp(lv_C(xi)) - a(xi, lv_C(xi)), pt, brk)
    z_drift = 0.0
    for k in range(n):
        if pt.coef[k] == 0.0:
            continue
        m = sm.ensemble.all_models[k]

        def sq(xi, m=m):
            lv = float(density_log(m, xi))
            lr = sm.log_one_eta + lv_C(xi) - lv
            return math.exp(2.0 * _log_abs_expm1(lr) + lv)

        z_drift += pt.coef[k] * _quad(sq, pt)

    def jump(xi):
        # J is affine in (x, z), so the compensated jump integrand cancels to
        # rounding; every piece is pre-multiplied by beta* = (1+eta) v_C
        lw = sm.log_one_eta + lv_C(xi)
        w = math.exp(lw)
        ceded = a(xi, lw)
        rw = np.exp(pt.log_ratio(xi) + lw)
        dJ = -(xi * w - ceded) + float(np.dot(pt.coef, rw - w))
        lin = (xi * w - ceded) + float(np.dot(pt.coef, w - rw))
        return dJ + lin

    jump_term = _quad(jump, pt, brk)
    return dJ_dt + (mk.c - premium_flow - retained) + z_drift + jump_term


def generator_reduced(alpha: ControlPerturbation, beta: ControlPerturbation, t: float, x: float,
                      z, ensemble, market: Optional[MarketParams] = None) -> float:
    """Reduced generator ``A^{alpha, beta} J`` as a single quadrature.

    ``sum_k c_k int ([1 - beta/v_k]^2 - [1 - beta*/v_k]^2) v_k
    + int (xi - alpha)(beta* - beta)`` with ``c_k = pi_k z_k l_k(T-t) / (2 theta)``.
    """
    sm = _sm(ensemble, market)
    _check_beta_admissible(beta, sm)
    pt = _point(sm, t, x, z)
    a = _alpha(alpha, pt)
    brk = alpha.breakpoints()

    def integrand(xi):
        lb, sign, lgap = _log_beta_gap(beta, pt, xi)
        if sign == 0.0:
            return 0.0
        lvk = pt.log_vk(xi)
        lbs = pt.log_beta_star(xi)
        # (beta - beta*) [(beta + beta*)/v_k - 2]
        quad_part = np.exp(np.logaddexp(lb, lbs) - lvk + lgap) - 2.0 * math.exp(lgap)
        retained = xi * math.exp(lgap) - a(xi, lgap)
        return sign * (float(np.dot(pt.coef, quad_part)) - retained)

    return _quad(integrand, pt, brk)


def residual_alpha_fixed(beta: ControlPerturbation, t: float, x: float, z, ensemble,
                         market: Optional[MarketParams] = None) -> float:
    """``A^{alpha*, beta} J = sum_k c_k int (beta - beta*)^2 / v_k`` by quadrature.

    ``c_k = pi_k z_k l_k(T-t) / (2 theta)``.  Raises :class:`AdmissibilityError`
    if ``beta`` is too heavy-tailed for some ``v_k``.
    """
    if beta.kind != "beta":
        raise ValueError("residual_alpha_fixed takes a beta perturbation")
    sm = _sm(ensemble, market)
    _check_beta_admissible(beta, sm)
    pt = _point(sm, t, x, z)
    active = pt.coef > 0

    def integrand(xi):
        _, sign, lgap = _log_beta_gap(beta, pt, xi)
        if sign == 0.0:
            return 0.0
        terms = np.exp(2.0 * lgap - pt.log_vk(xi)[active])
        return float(np.dot(pt.coef[active], terms))

    return _quad(integrand, pt)


def residual_alpha_fixed_closed_form(s: float, t: float, z, ensemble,
                                     market: Optional[MarketParams] = None) -> float:
    """Closed form of :func:`residual_alpha_fixed` for ``beta = s * beta*``.

    ``(s - 1)^2 (1+eta)^2 / 2 * (1/theta) sum_k pi_k z_k l_k(T-t) I2(C, k)``.
    """
    sm = _sm(ensemble, market)
    pt = _point(sm, t, 0.0, z)
    return (s - 1.0) ** 2 * (1.0 + sm.market.eta) ** 2 * float(np.dot(pt.coef, sm.i2))


def scaled_distance(beta: ControlPerturbation, ensemble, market: Optional[MarketParams] = None
                    ) -> float:
    """``int |beta - beta*| / int beta*``: total-variation gap relative to the optimal mass."""
    sm = _sm(ensemble, market)
    pt = _point(sm, 0.0, 0.0, None)

    def integrand(xi):
        _, sign, lgap = _log_beta_gap(beta, pt, xi)
        return 0.0 if sign == 0.0 else math.exp(lgap)

    return _quad(integrand, pt, tol=1e-10) / ((1.0 + sm.market.eta) * sm.C.rate)


def random_alpha_perturbations(n: int, rng: np.random.Generator, ensemble: StrategyModel
                               ) -> list:
    """Draw ``n`` admissible cessions, cycling through the parametric families."""
    mu = ensemble.C.mean_severity
    out = []
    for i in range(n):
        fam = ALPHA_FAMILIES[i % len(ALPHA_FAMILIES)]
        if fam == "indicator":
            params = {"eps": float(rng.uniform(-2.0, 2.0) * mu), "b": float(rng.uniform(0.2, 5.0) * mu)}
        elif fam == "proportional":
            params = {"s": float(rng.uniform(0.0, 1.0))}
        elif fam == "excess":
            params = {"d": float(rng.uniform(0.1, 4.0) * mu)}
        elif fam == "smooth":
            params = {"eps": float(rng.uniform(-2.0, 2.0) * mu), "b": float(rng.uniform(0.2, 3.0) * mu)}
        else:
            params = {}
        out.append(ControlPerturbation("alpha", fam, params))
    return out


def random_beta_perturbations(n: int, rng: np.random.Generator, ensemble: StrategyModel
                              ) -> list:
    """Draw ``n`` compensators admissible against every model of the ensemble."""
    models = ensemble.ensemble.all_models
    C = ensemble.C
    min_scale = min(m.scale for m in models)
    max_shape = max(m.shape for m in models)
    tilt_cap = min(2.0 / C.scale - 1.0 / m.scale for m in models) * C.mean_severity / 2.0
    out = []
    for i in range(n):
        fam = BETA_FAMILIES[1 + i % (len(BETA_FAMILIES) - 1)]
        if fam == "scaled":
            params = {"s": float(rng.uniform(0.3, 2.5))}
        elif fam == "gamma_bump":
            params = {"eps": float(rng.uniform(0.01, 1.0)) * C.rate,
                      "shape": float(rng.uniform(0.55, 1.5) * max_shape),
                      "scale": float(rng.uniform(0.3, 1.9) * min_scale)}
        else:
            params = {"eps": float(rng.uniform(-1.0, 0.9) * tilt_cap)}
        out.append(ControlPerturbation("beta", fam, params))
    return out


@dataclass
class VerificationEntry:
    perturbation: ControlPerturbation
    condition: str
    residual: float
    tolerance: float
    passed: bool
    distance: Optional[float] = None
    cross_check: Optional[float] = None

    def __post_init__(self):
        self.residual = float(self.residual)
        self.passed = bool(self.passed)
        if self.distance is not None:
            self.distance = float(self.distance)
        if self.cross_check is not None:
            self.cross_check = float(self.cross_check)

    def to_dict(self) -> dict:
        d = {"perturbation": self.perturbation.to_dict(), "condition": self.condition,
             "residual": self.residual, "tolerance": self.tolerance, "passed": self.passed}
        if self.distance is not None:
            d["scaled_distance"] = self.distance
        if self.cross_check is not None:
            d["reduced_form_value"] = self.cross_check
        return d


def verification_report(ensemble, market: Optional[MarketParams] = None, *,
                        n_perturbations: int = 100, seed: int = 0, t: Optional[float] = None,
                        x: float = 0.0, z=None, beta_tol: float = 1e-8,
                        alpha_tol: float = 1e-10, cross_check: bool = True) -> dict:
    """Evaluate both saddle-point conditions over random perturbations.

    ``A^{alpha, beta*} J`` must satisfy ``|.| <= beta_tol``;
    ``A^{alpha*, beta} J`` must be ``>= -alpha_tol`` and strictly positive
    whenever the compensator differs from ``beta*`` by more than 1e-3 in
    :func:`scaled_distance`.  With ``cross_check`` each compensator residual is
    also evaluated through :func:`generator_reduced` and reported alongside.
    """
    sm = _sm(ensemble, market)
    rng = np.random.default_rng(seed)
    if t is None:
        t = 0.5 * sm.market.T
    entries = []
    for pert in random_alpha_perturbations(n_perturbations, rng, sm):
        r = residual_beta_fixed(pert, t, x, z, sm)
        entries.append(VerificationEntry(pert, "A^{alpha,beta*}J = 0", r, beta_tol,
                                         abs(r) <= beta_tol))
    optimal = ControlPerturbation("alpha", "optimal")
    for pert in random_beta_perturbations(n_perturbations, rng, sm):
        r = residual_alpha_fixed(pert, t, x, z, sm)
        dist = scaled_distance(pert, sm)
        reduced = generator_reduced(optimal, pert, t, x, z, sm) if cross_check else None
        ok = r >= -alpha_tol and (dist <= 1e-3 or r > 0)
        entries.append(VerificationEntry(pert, "A^{alpha*,beta}J >= 0", r, alpha_tol, ok,
                                         distance=dist, cross_check=reduced))
    return {
        "state": {"t": t, "x": x, "z": None if z is None else list(map(float, z))},
        "n_perturbations": n_perturbations,
        "seed": seed,
        "passed": bool(all(e.passed for e in entries)),
        "max_abs_beta_fixed": max((abs(e.residual) for e in entries
                                   if e.perturbation.kind == "alpha"), default=0.0),
        "min_alpha_fixed": min((e.residual for e in entries
                                if e.perturbation.kind == "beta"), default=0.0),
        "entries": [e.to_dict() for e in entries],
    }
