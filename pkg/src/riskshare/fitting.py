"""Claims data ingestion, maximum-likelihood compensators and cross-validation ensembles.

Data are policy-level: exposure in policy-years, number of claims and the
average claim size.  The claim rate is the Poisson MLE; severities are a
claim-count weighted Gamma fit to the per-policy average claim.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .compensators import DomainError, GammaCompensator, ModelEnsemble

__all__ = [
    "CSV_HEADER",
    "CVResult",
    "DegenerateDataError",
    "DegenerateFitWarning",
    "FitError",
    "FitResult",
    "PolicyRecord",
    "PolicyTable",
    "SchemaError",
    "cv_ensemble",
    "cv_fit",
    "fit_compensator",
    "fit_gamma_severity",
    "fit_poisson_rate",
    "read_policies",
    "synthetic_portfolio",
    "write_policies",
]

logger = logging.getLogger(__name__)

CSV_HEADER = ("policy_id", "exposure", "n_claims", "avg_claim")
MAX_NEWTON_ITER = 200


class SchemaError(ValueError):
    """Malformed policy CSV."""


class DegenerateDataError(ValueError):
    """Too little variation in the data to identify the parameters."""


class FitError(RuntimeError):
    """An estimator failed to converge."""


class DegenerateFitWarning(UserWarning):
    """The fit succeeded but produced a degenerate value (e.g. zero claim rate)."""


@dataclass(frozen=True)
class PolicyRecord:
    policy_id: str
    exposure: float
    n_claims: int
    avg_claim: float

    def __post_init__(self):
        if not (self.exposure > 0 and math.isfinite(self.exposure)):
            raise DomainError(f"policy {self.policy_id}: exposure must be positive")
        if self.n_claims < 0 or int(self.n_claims) != self.n_claims:
            raise DomainError(f"policy {self.policy_id}: n_claims must be a nonnegative integer")
        if not (self.avg_claim >= 0 and math.isfinite(self.avg_claim)):
            raise DomainError(f"policy {self.policy_id}: avg_claim must be nonnegative")
        if self.n_claims == 0 and self.avg_claim != 0:
            raise DomainError(f"policy {self.policy_id}: avg_claim must be 0 when n_claims is 0")


@dataclass
class PolicyTable:
    """Column-oriented portfolio; the form every estimator works on."""

    policy_id: np.ndarray
    exposure: np.ndarray
    n_claims: np.ndarray
    avg_claim: np.ndarray

    def __post_init__(self):
        self.policy_id = np.asarray(self.policy_id).astype(str)
        self.exposure = np.asarray(self.exposure, dtype=float)
        self.n_claims = np.asarray(self.n_claims, dtype=np.int64)
        self.avg_claim = np.asarray(self.avg_claim, dtype=float)
        n = self.policy_id.size
        if not (self.exposure.size == self.n_claims.size == self.avg_claim.size == n):
            raise ValueError("policy columns have different lengths")
        if np.any(~(self.exposure > 0)):
            raise DomainError("exposure must be positive")
        if np.any(self.n_claims < 0):
            raise DomainError("n_claims must be nonnegative")
        if np.any(~(self.avg_claim >= 0)):
            raise DomainError("avg_claim must be nonnegative")
        if np.any((self.n_claims == 0) & (self.avg_claim != 0)):
            raise DomainError("avg_claim must be 0 when n_claims is 0")

    def __len__(self) -> int:
        return self.policy_id.size

    @classmethod
    def from_records(cls, records: Iterable[PolicyRecord]) -> "PolicyTable":
        recs = list(records)
        return cls(
            np.array([r.policy_id for r in recs], dtype=str),
            np.array([r.exposure for r in recs], dtype=float),
            np.array([r.n_claims for r in recs], dtype=np.int64),
            np.array([r.avg_claim for r in recs], dtype=float),
        )

    def records(self) -> list:
        return [PolicyRecord(str(p), float(e), int(n), float(a))
                for p, e, n, a in zip(self.policy_id, self.exposure, self.n_claims,
                                      self.avg_claim)]

    def subset(self, idx) -> "PolicyTable":
        return PolicyTable(self.policy_id[idx], self.exposure[idx], self.n_claims[idx],
                           self.avg_claim[idx])


def _table(records) -> PolicyTable:
    if isinstance(records, PolicyTable):
        return records
    return PolicyTable.from_records(records)


def read_policies(path) -> PolicyTable:
    """Read a policy CSV with header ``policy_id,exposure,n_claims,avg_claim``.

    Raises :class:`SchemaError` naming the offending line on any malformed row.
    """
    path = Path(path)
    ids, exp, ncl, avg = [], [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: line 1: empty file, expected header "
                              f"{','.join(CSV_HEADER)}") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise SchemaError(f"{path}: line 1: header {header} lacks columns {missing}")
        col = {c: header.index(c) for c in CSV_HEADER}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, "
                                  f"got {len(row)}")
            try:
                e = float(row[col["exposure"]])
                n_raw = float(row[col["n_claims"]])
                a = float(row[col["avg_claim"]])
            except ValueError as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from None
            if n_raw != int(n_raw) or n_raw < 0:
                raise SchemaError(f"{path}: line {lineno}: n_claims must be a nonnegative integer")
            if not (e > 0 and math.isfinite(e)):
                raise SchemaError(f"{path}: line {lineno}: exposure must be positive")
            if not (a >= 0 and math.isfinite(a)):
                raise SchemaError(f"{path}: line {lineno}: avg_claim must be nonnegative")
            if n_raw == 0 and a != 0:
                raise SchemaError(f"{path}: line {lineno}: avg_claim must be 0 when n_claims is 0")
            ids.append(row[col["policy_id"]].strip())
            exp.append(e)
            ncl.append(int(n_raw))
            avg.append(a)
    return PolicyTable(np.array(ids, dtype=str), np.array(exp), np.array(ncl, dtype=np.int64),
                       np.array(avg))


def write_policies(records, path) -> Path:
    tab = _table(records)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for p, e, n, a in zip(tab.policy_id, tab.exposure, tab.n_claims, tab.avg_claim):
            w.writerow([p, repr(float(e)), int(n), repr(float(a))])
    return path


def fit_poisson_rate(records) -> float:
    """Claims per policy-year, ``sum n_claims / sum exposure``."""
    tab = _table(records)
    total = float(tab.exposure.sum()) if len(tab) else 0.0
    if not total > 0:
        raise DomainError("total exposure must be positive")
    rate = float(tab.n_claims.sum()) / total
    if rate == 0.0:
        warnings.warn("no claims in the data: fitted rate is 0", DegenerateFitWarning,
                      stacklevel=2)
    return rate


def _severity_data(tab: PolicyTable) -> tuple:
    claimed = tab.n_claims > 0
    zero = claimed & (tab.avg_claim == 0)
    if zero.any():
        msg = f"dropping {int(zero.sum())} policies with claims but zero average claim"
        warnings.warn(msg, DegenerateFitWarning, stacklevel=3)
        logger.warning(msg)
    keep = claimed & ~zero
    y = tab.avg_claim[keep]
    w = tab.n_claims[keep].astype(float)
    if y.size < 2:
        raise DegenerateDataError("severity fit needs at least two policies with claims")
    if np.ptp(y) == 0:
        raise DegenerateDataError("all average claims are equal; Gamma shape is not identified")
    return y, w, int((~keep & claimed).sum())


def _solve_shape(s: float) -> tuple:
    """Root of ``ln m - digamma(m) = s`` (``s > 0``); returns (m, iterations).

    The left side decreases strictly from +inf to 0, so the root is unique.
    Newton steps are taken inside a maintained bracket, bisecting whenever a
    step would leave it.
    """

    def f(m):
        return math.log(m) - float(digamma(m)) - s

    # closed-form approximation as the starting point
    m = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    lo, hi = m, m
    while f(lo) <= 0:
        lo /= 2.0
    while f(hi) >= 0:
        hi *= 2.0
    for it in range(1, MAX_NEWTON_ITER + 1):
        fm = f(m)
        if fm > 0:
            lo = max(lo, m)
        else:
            hi = min(hi, m)
        dfm = 1.0 / m - float(polygamma(1, m))
        step = fm / dfm
        new = m - step
        if not (lo < new < hi):
            new = 0.5 * (lo + hi)
        if abs(new - m) <= 1e-15 * new:
            return new, it
        m = new
    raise FitError(f"shape equation did not converge in {MAX_NEWTON_ITER} iterations")


@dataclass
class SeverityFit:
    shape: float
    scale: float
    loglik: float
    gradient: np.ndarray
    covariance: np.ndarray
    iterations: int
    n_dropped: int


def _severity_fit(tab: PolicyTable) -> SeverityFit:
    y, w, dropped = _severity_data(tab)
    W = w.sum()
    ybar = float(np.dot(w, y) / W)
    logs = np.log(y)
    s = math.log(ybar) - float(np.dot(w, logs) / W)
    if not s > 0:
        raise DegenerateDataError("average claims show no dispersion")
    m, iters = _solve_shape(s)
    phi = ybar / m
    loglik = float(np.dot(w, (m - 1.0) * logs - y / phi - gammaln(m) - m * math.log(phi)))
    # per-record scores of the weighted log-likelihood in (m, phi)
    s_m = w * (logs - math.log(phi) - float(digamma(m)))
    s_phi = w * (y / phi**2 - m / phi)
    grad = np.array([s_m.sum(), s_phi.sum()])
    H = np.array([
        [-W * float(polygamma(1, m)), -W / phi],
        [-W / phi, float(np.dot(w, -2.0 * y / phi**3 + m / phi**2))],
    ])
    B = np.array([[np.dot(s_m, s_m), np.dot(s_m, s_phi)], [np.dot(s_m, s_phi), np.dot(s_phi, s_phi)]])
    Hinv = np.linalg.inv(H)
    cov = Hinv @ B @ Hinv
    return SeverityFit(m, phi, loglik, grad, cov, iters, dropped)


def fit_gamma_severity(records) -> tuple:
    """Weighted Gamma MLE ``(shape, scale)`` for the per-policy average claim.

    Weights are the claim counts.  The shape solves
    ``ln m - digamma(m) = ln(ybar_w) - mean_w(ln y)``; the scale is ``ybar_w / m``.
    """
    fit = _severity_fit(_table(records))
    return fit.shape, fit.scale


@dataclass
class FitResult:
    """Fitted compensator with diagnostics.

    ``standard_errors`` has keys ``rate``, ``shape``, ``scale``; severity errors
    are sandwich estimates for the weighted likelihood.  ``gradient`` is the
    score of the severity log-likelihood scaled per unit claim weight.
    """

    model: GammaCompensator
    loglik_severity: float
    n_policies: int
    n_claims_total: int
    converged: bool
    standard_errors: dict = field(default_factory=dict)
    gradient: tuple = ()
    iterations: int = 0
    n_dropped: int = 0

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "loglik_severity": self.loglik_severity,
                "n_policies": self.n_policies, "n_claims_total": self.n_claims_total,
                "converged": self.converged, "standard_errors": dict(self.standard_errors),
                "gradient": list(self.gradient), "iterations": self.iterations,
                "n_dropped": self.n_dropped}


def fit_compensator(records) -> FitResult:
    """Fit ``(rate, shape, scale)`` and their standard errors."""
    tab = _table(records)
    rate = fit_poisson_rate(tab)
    if not rate > 0:
        raise DegenerateDataError("no claims: the compensator needs a positive rate")
    sev = _severity_fit(tab)
    total_claims = int(tab.n_claims.sum())
    exposure = float(tab.exposure.sum())
    # score per unit weight, in units where both parameters are O(1)
    W = float(tab.n_claims[tab.n_claims > 0].sum())
    grad = sev.gradient * np.array([1.0, sev.scale]) / W
    converged = bool(np.all(np.abs(grad) <= 1e-8))
    se = {
        "rate": math.sqrt(rate / exposure),
        "shape": math.sqrt(sev.covariance[0, 0]),
        "scale": math.sqrt(sev.covariance[1, 1]),
    }
    return FitResult(
        model=GammaCompensator(rate, sev.shape, sev.scale), loglik_severity=sev.loglik,
        n_policies=len(tab), n_claims_total=total_claims, converged=converged,
        standard_errors=se, gradient=tuple(float(g) for g in grad), iterations=sev.iterations,
        n_dropped=sev.n_dropped,
    )


def synthetic_portfolio(n_policies: int, rate: float, shape: float, scale: float, seed: int,
                        exposure=1.0) -> PolicyTable:
    """Simulated portfolio: Poisson claim counts and Gamma average claims.

    Each claiming policy's average claim is a single Gamma(shape, scale) draw,
    the distribution the weighted severity likelihood assumes.
    """
    if n_policies < 1:
        raise DomainError("n_policies must be at least 1")
    rng = np.random.default_rng(seed)
    exp = np.broadcast_to(np.asarray(exposure, dtype=float), (n_policies,)).copy()
    n = rng.poisson(rate * exp)
    avg = np.where(n > 0, rng.gamma(shape, scale, size=n_policies), 0.0)
    ids = np.array([f"P{i:07d}" for i in range(n_policies)])
    return PolicyTable(ids, exp, n, avg)


@dataclass
class CVResult:
    ensemble: ModelEnsemble
    full_fit: FitResult
    subsample_fits: list
    subsample_size: int
    seed: int

    def scatter(self) -> dict:
        """Fitted parameters of the subsample models (rate, shape, scale columns)."""
        ms = [f.model for f in self.subsample_fits]
        return {"rate": [m.rate for m in ms], "shape": [m.shape for m in ms],
                "scale": [m.scale for m in ms]}


def cv_fit(records, n_models: int = 100, fraction: float = 0.5, seed: int = 0,
           weights: Optional[Sequence[float]] = None, weight_counterparty: float = 0.0
           ) -> CVResult:
    """Counterparty model from all data plus ``n_models`` subsample models.

    Subsample ``k`` is ``floor(fraction * N)`` records drawn without replacement
    with a generator seeded by ``(seed, k)``; draws are independent across k.
    Default weights are uniform over the subsample models with zero weight on
    the counterparty model.
    """
    tab = _table(records)
    if len(tab) == 0:
        raise DomainError("no records")
    if n_models < 1:
        raise DomainError("n_models must be at least 1")
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"fraction must lie in (0, 1], got {fraction!r}")
    size = int(math.floor(fraction * len(tab)))
    if size < 2:
        raise DomainError("subsamples would hold fewer than two records")
    full = fit_compensator(tab)
    fits = []
    for k in range(1, n_models + 1):
        rng = np.random.default_rng([seed, k])
        idx = np.sort(rng.choice(len(tab), size=size, replace=False))
        try:
            fits.append(fit_compensator(tab.subset(idx)))
        except (DegenerateDataError, FitError, DomainError) as exc:
            raise FitError(f"subsample k={k} (seed={seed}) failed: {exc}") from exc
    if weights is None:
        rest = 1.0 - weight_counterparty
        weights = [rest / n_models] * n_models
    ens = ModelEnsemble(models=tuple(f.model for f in fits), counterparty=full.model,
                        weights=tuple(weights), weight_counterparty=weight_counterparty)
    return CVResult(ens, full, fits, size, seed)


def cv_ensemble(records, n_models: int = 100, fraction: float = 0.5, seed: int = 0,
                weights: Optional[Sequence[float]] = None) -> ModelEnsemble:
    """The ensemble part of :func:`cv_fit`."""
    return cv_fit(records, n_models, fraction, seed, weights).ensemble
