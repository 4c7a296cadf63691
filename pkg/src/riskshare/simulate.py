"""Monte Carlo paths of the loss process and of the optimally controlled wealth.

Paths are simulated in chunks, vectorized across the paths of a chunk.  The
randomness of path ``i`` depends only on ``(seed, i)``, so chunk size and
worker count never change a path.

Two independent routes produce the insurer's wealth:

* the closed form affine in ``Z*`` (:func:`closed_form_x_star`), built from
  the accumulated log jump ratios, and
* direct integration of the wealth SDE with multiplicatively updated ``Z*``
  (:func:`integrate_wealth_sde`), which also yields the counterparty's wealth.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .compensators import GammaCompensator, ModelEnsemble, check_assumption_1
from .controls import MarketParams, StrategyModel
from .moments import Measure
from .rng import STREAM_ARRIVALS, STREAM_MARKS, CounterStream

__all__ = [
    "ConfigurationError",
    "DegenerateSampleError",
    "KDECurve",
    "PathBundle",
    "SimConfig",
    "SimulationResult",
    "closed_form_x_star",
    "counterparty_path",
    "envelope",
    "integrate_wealth_sde",
    "run_simulation",
    "simulate_prm",
    "terminal_kde",
    "x_star_from_sde",
]

logger = logging.getLogger(__name__)

# cap on floats held per chunk in the (paths x jumps x models) jump-ratio tensor
_CHUNK_BUDGET = 4_000_000


class ConfigurationError(ValueError):
    """Invalid simulation configuration."""


class DegenerateSampleError(ValueError):
    """A sample is too small or has no spread."""


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``measure`` is ``"Q*"`` or a model tag (``"P_C"``, ``"P_3"``, ``3``);
    ``record_grid`` must start at 0 and end at the horizon.
    """

    measure: object
    n_paths: int
    seed: int
    record_grid: tuple

    def __post_init__(self):
        grid = np.asarray(self.record_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ConfigurationError("record grid needs at least the points 0 and T")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ConfigurationError("record grid must start at 0 and increase strictly")
        if int(self.n_paths) < 1:
            raise ConfigurationError("n_paths must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "record_grid", tuple(float(g) for g in grid))
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "measure", Measure.parse(self.measure))

    @classmethod
    def uniform_grid(cls, measure, n_paths, seed, horizon, n_steps=50) -> "SimConfig":
        return cls(measure, n_paths, seed, tuple(np.linspace(0.0, horizon, n_steps + 1)))

    @property
    def grid(self) -> np.ndarray:
        return np.asarray(self.record_grid)


@dataclass
class PathBundle:
    """One simulated scenario recorded on the grid.

    ``logZ`` has shape ``(len(grid), n+1)`` in ensemble order ``1..n, C``.
    """

    path_id: int
    grid: np.ndarray
    jump_times: np.ndarray
    jump_marks: np.ndarray
    logZ: np.ndarray
    X_star: np.ndarray
    X_cl: np.ndarray
    Y: np.ndarray


def _loss_law(sm: StrategyModel, measure: Measure) -> tuple:
    """(jump intensity, severity model) of the loss process under ``measure``."""
    if measure.is_qstar:
        return (1.0 + sm.market.eta) * sm.C.rate, sm.C
    m = sm.ensemble.model(measure.index)
    return m.rate, m


def _draw_jumps(stream: CounterStream, paths: np.ndarray, intensity: float,
                severity: GammaCompensator, horizon: float):
    """Jump times (by exponential interarrivals) and marks, padded with inf / nan."""
    if not intensity > 0:
        raise ConfigurationError("jump intensity must be positive")
    lam_T = intensity * horizon
    k = int(math.ceil(lam_T + 8.0 * math.sqrt(lam_T) + 8.0))
    P = paths.size
    gaps = stream.exponential(paths[:, None], STREAM_ARRIVALS, np.arange(k)[None, :]) / intensity
    times = np.cumsum(gaps, axis=1)
    while True:
        short = np.flatnonzero(times[:, -1] <= horizon)
        if short.size == 0:
            break
        start = times.shape[1]
        more = stream.exponential(paths[short, None], STREAM_ARRIVALS,
                                  np.arange(start, start + k)[None, :]) / intensity
        ext = np.full((P, k), np.inf)
        ext[short] = times[short, -1:] + np.cumsum(more, axis=1)
        times = np.concatenate([times, ext], axis=1)
    n_jumps = np.sum(times <= horizon, axis=1)
    kmax = int(n_jumps.max()) if P else 0
    times = times[:, :kmax]
    mask = np.arange(kmax)[None, :] < n_jumps[:, None]
    times = np.where(mask, times, np.inf)
    marks = np.full((P, kmax), np.nan)
    pi, ji = np.nonzero(mask)
    if pi.size:
        marks[pi, ji] = stream.gamma(paths[pi], STREAM_MARKS, ji, severity.shape) * severity.scale
    return times, marks, n_jumps


def _jump_log_ratios(sm: StrategyModel, marks: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``ln[(1+eta) v_C/v_k]`` at every mark; zero on padding. Shape (P, K, n)."""
    out = np.zeros(marks.shape + (sm.ensemble.size,))
    if mask.any():
        out[mask] = sm.log_ratio(marks[mask])
    return out


def closed_form_x_star(sm: StrategyModel, grid: np.ndarray, logZ: np.ndarray) -> np.ndarray:
    """``x + [c - (1+eta) L] t + (1/theta) sum_k pi_k [l_k(T) - l_k(T-t) Z_k(t)]``.

    ``logZ`` has trailing shape ``(len(grid), n+1)``.
    """
    mk = sm.market
    g = sm.g
    active = sm.weights > 0
    w = sm.weights[active]
    lt = np.exp(mk.T * g[active])
    log_lz = (mk.T - grid)[:, None] * g[active] + logZ[..., active]
    penalty = (w * (lt - np.exp(log_lz))).sum(axis=-1) / mk.theta
    return mk.x0 + (mk.c - (1.0 + mk.eta) * sm.loss_rate) * grid + penalty


def _exp_integral(rate: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """``int_0^dt exp(rate s) ds``, stable near ``rate = 0``."""
    rate = np.broadcast_to(rate, np.broadcast_shapes(np.shape(rate), np.shape(dt)))
    dt = np.broadcast_to(dt, rate.shape)
    out = np.empty(rate.shape)
    small = np.abs(rate * dt) < 1e-8
    out[small] = dt[small] * (1.0 + 0.5 * rate[small] * dt[small])
    big = ~small
    out[big] = np.expm1(rate[big] * dt[big]) / rate[big]
    return out


def integrate_wealth_sde(sm: StrategyModel, grid: np.ndarray, times: np.ndarray,
                         marks: np.ndarray, n_jumps: np.ndarray) -> tuple:
    """Integrate ``X*``, ``Y`` and ``Z*`` forward through the jumps.

    Between jumps the drifts are integrated exactly; at a jump of size ``xi``
    the insurer's wealth drops by ``xi - alpha*`` and the counterparty pays
    ``alpha*``, both evaluated at the left limit ``Z*(s-)``.  Returns
    ``(X, Y, Z)`` on the grid with shapes ``(P, G)``, ``(P, G)``, ``(P, G, n+1)``.
    """
    mk = sm.market
    eta, theta, T = mk.eta, mk.theta, mk.T
    P, K = times.shape
    n = sm.ensemble.size
    w = sm.weights
    d = sm.log_drift
    g = sm.g
    A = d - g
    D = sm.drift_coefficients()
    base_drift = mk.c - (1.0 + eta) * sm.loss_rate

    Zs = np.empty((P, K + 1, n))
    Xs = np.empty((P, K + 1))
    Ys = np.empty((P, K + 1))
    taus = np.empty((P, K + 1))
    Z = np.ones((P, n))
    X = np.full(P, mk.x0)
    Y = np.full(P, mk.y0)
    tau = np.zeros(P)
    Zs[:, 0], Xs[:, 0], Ys[:, 0], taus[:, 0] = Z, X, Y, tau

    for i in range(K):
        live = i < n_jumps
        s = np.where(live, times[:, i], tau)
        dt = s - tau
        zl = Z * np.exp((T - tau)[:, None] * g)
        phi = zl * _exp_integral(A, dt[:, None])
        flow = (phi * (w * D)).sum(axis=1) / theta
        X_pre = X + base_drift * dt + (1.0 + eta) * flow
        Y_pre = Y + (1.0 + eta) * (sm.loss_rate * dt - flow)
        Z_pre = Z * np.exp(d * dt[:, None])
        xi = np.where(live, marks[:, i], 1.0)
        ratio = np.exp(sm.log_ratio(xi))
        wz = w * Z_pre * np.exp((T - s)[:, None] * g)
        cession_gap = (wz * (ratio - 1.0)).sum(axis=1) / theta
        X_new = X_pre - cession_gap
        Y_new = Y_pre - (xi - cession_gap)
        Z_new = Z_pre * ratio
        X = np.where(live, X_new, X)
        Y = np.where(live, Y_new, Y)
        Z = np.where(live[:, None], Z_new, Z)
        tau = s
        Zs[:, i + 1], Xs[:, i + 1], Ys[:, i + 1], taus[:, i + 1] = Z, X, Y, tau

    counts = _jump_counts(times, grid)
    rows = np.arange(P)[:, None]
    Zg = Zs[rows, counts]
    Xg = Xs[rows, counts]
    Yg = Ys[rows, counts]
    tg = taus[rows, counts]
    dt = grid[None, :] - tg
    zl = Zg * np.exp((T - tg)[..., None] * g)
    phi = zl * _exp_integral(A, dt[..., None])
    flow = (phi * (w * D)).sum(axis=-1) / theta
    X_grid = Xg + base_drift * dt + (1.0 + eta) * flow
    Y_grid = Yg + (1.0 + eta) * (sm.loss_rate * dt - flow)
    Z_grid = Zg * np.exp(d * dt[..., None])
    return X_grid, Y_grid, Z_grid


def _jump_counts(times: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Number of jumps at or before each grid time; shape (P, G)."""
    return np.sum(times[:, None, :] <= grid[None, :, None], axis=2)


@dataclass
class _Chunk:
    start: int
    times: np.ndarray
    marks: np.ndarray
    n_jumps: np.ndarray
    logZ: np.ndarray
    X_star: np.ndarray
    X_cl: np.ndarray
    Y: np.ndarray


def _simulate_chunk(sm: StrategyModel, config: SimConfig, start: int, stop: int) -> _Chunk:
    grid = config.grid
    stream = CounterStream(config.seed)
    paths = np.arange(start, stop, dtype=np.uint64)
    intensity, severity = _loss_law(sm, config.measure)
    times, marks, n_jumps = _draw_jumps(stream, paths, intensity, severity, sm.market.T)
    mask = np.isfinite(times)
    lr = _jump_log_ratios(sm, marks, mask)
    P = paths.size
    cum_lr = np.concatenate([np.zeros((P, 1, lr.shape[2])), np.cumsum(lr, axis=1)], axis=1)
    cum_xi = np.concatenate([np.zeros((P, 1)), np.cumsum(np.where(mask, marks, 0.0), axis=1)],
                            axis=1)
    counts = _jump_counts(times, grid)
    rows = np.arange(P)[:, None]
    logZ = grid[None, :, None] * sm.log_drift + cum_lr[rows, counts]
    X_cl = sm.market.x0 + sm.market.c * grid[None, :] - cum_xi[rows, counts]
    X_star = closed_form_x_star(sm, grid, logZ)
    _, Y, _ = integrate_wealth_sde(sm, grid, times, marks, n_jumps)
    return _Chunk(start, times, marks, n_jumps, logZ, X_star, X_cl, Y)


def _chunk_size(sm: StrategyModel, config: SimConfig) -> int:
    intensity, _ = _loss_law(sm, config.measure)
    lam_T = intensity * sm.market.T
    kmax = lam_T + 8.0 * math.sqrt(lam_T) + 8.0
    per_path = kmax * (sm.ensemble.size + 2) + len(config.record_grid) * (sm.ensemble.size + 4)
    return int(max(16, min(8192, _CHUNK_BUDGET // per_path)))


def _prepare(config: SimConfig, ensemble, market) -> StrategyModel:
    sm = ensemble if isinstance(ensemble, StrategyModel) else StrategyModel(ensemble, market)
    rep = check_assumption_1(sm.ensemble)
    if not rep.passed:
        raise ConfigurationError(f"ensemble fails assumption 1 at {rep.failures[0][0]}")
    if abs(config.grid[-1] - sm.market.T) > 1e-12 * max(1.0, sm.market.T):
        raise ConfigurationError("record grid must end at the horizon T")
    if not config.measure.is_qstar:
        sm.ensemble.position(config.measure.index)
    return sm


def _chunks(config: SimConfig, sm: StrategyModel, chunk_size: Optional[int]) -> list:
    size = chunk_size or _chunk_size(sm, config)
    return [(a, min(a + size, config.n_paths)) for a in range(0, config.n_paths, size)]


def simulate_prm(config: SimConfig, ensemble, market: Optional[MarketParams] = None,
                 *, chunk_size: Optional[int] = None) -> Iterator[PathBundle]:
    """Yield one :class:`PathBundle` per path, in path order."""
    sm = _prepare(config, ensemble, market)
    grid = config.grid
    for a, b in _chunks(config, sm, chunk_size):
        ch = _simulate_chunk(sm, config, a, b)
        for i in range(b - a):
            nj = ch.n_jumps[i]
            yield PathBundle(
                path_id=a + i, grid=grid,
                jump_times=ch.times[i, :nj].copy(), jump_marks=ch.marks[i, :nj].copy(),
                logZ=ch.logZ[i], X_star=ch.X_star[i], X_cl=ch.X_cl[i], Y=ch.Y[i],
            )


def x_star_from_sde(path: PathBundle, ensemble, market: Optional[MarketParams] = None) -> np.ndarray:
    """Insurer's optimal wealth on the path's grid, by integrating its SDE."""
    sm = ensemble if isinstance(ensemble, StrategyModel) else StrategyModel(ensemble, market)
    X, _, _ = integrate_wealth_sde(sm, np.asarray(path.grid), path.jump_times[None, :],
                                   path.jump_marks[None, :], np.array([path.jump_times.size]))
    return X[0]


def counterparty_path(path: PathBundle, ensemble, market: Optional[MarketParams] = None) -> np.ndarray:
    """Counterparty wealth ``Y`` on the path's grid: premium income minus ceded losses."""
    sm = ensemble if isinstance(ensemble, StrategyModel) else StrategyModel(ensemble, market)
    _, Y, _ = integrate_wealth_sde(sm, np.asarray(path.grid), path.jump_times[None, :],
                                   path.jump_marks[None, :], np.array([path.jump_times.size]))
    return Y[0]


class _Moments:
    """Mergeable per-column mean / M2 accumulator (Chan et al. update)."""

    def __init__(self, shape):
        self.n = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, batch: np.ndarray) -> None:
        nb = batch.shape[0]
        if nb == 0:
            return
        mb = batch.mean(axis=0)
        m2b = ((batch - mb) ** 2).sum(axis=0)
        n = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * nb / n
        self.m2 = self.m2 + m2b + delta**2 * self.n * nb / n
        self.n = n

    @property
    def var(self) -> np.ndarray:
        return self.m2 / (self.n - 1) if self.n > 1 else np.full_like(self.m2, np.nan)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.var / self.n)


@dataclass
class SimulationResult:
    """Arrays of a simulation run.

    ``X_star``, ``X_cl``, ``Y`` have shape ``(n_paths, G)``; ``Z_T`` holds
    ``Z*_k(T)`` for every path and model; ``logZ`` holds full grid trajectories
    for the first ``logZ.shape[0]`` paths only.  ``Z_stats`` summarizes
    ``Z*_k(t)`` over all paths at every grid time.
    """

    config: SimConfig
    labels: list
    grid: np.ndarray
    X_star: np.ndarray
    X_cl: np.ndarray
    Y: np.ndarray
    n_jumps: np.ndarray
    Z_T: np.ndarray
    logZ: np.ndarray
    Z_mean: np.ndarray
    Z_var: np.ndarray
    first_jumps: list = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return self.X_star.shape[0]

    def summary(self) -> dict:
        """Per-grid-time sample means, variances and standard errors."""
        n = self.n_paths

        def stats(a):
            var = a.var(axis=0, ddof=1) if n > 1 else np.full(a.shape[1], np.nan)
            return {"mean": a.mean(axis=0).tolist(), "var": var.tolist(),
                    "se": np.sqrt(var / n).tolist()}

        out = {
            "measure": str(self.config.measure),
            "n_paths": n,
            "seed": self.config.seed,
            "grid": self.grid.tolist(),
            "X_star": stats(self.X_star),
            "X_cl": stats(self.X_cl),
            "Y": stats(self.Y),
            "X_star_envelope": envelope(self.X_star),
            "jump_count": {"mean": float(self.n_jumps.mean()),
                           "var": float(self.n_jumps.var(ddof=1)) if n > 1 else None},
            "Z": {
                lab: {"mean": self.Z_mean[:, i].tolist(), "var": self.Z_var[:, i].tolist(),
                      "se": np.sqrt(self.Z_var[:, i] / n).tolist()}
                for i, lab in enumerate(self.labels)
            },
        }
        return out


def envelope(samples: np.ndarray) -> dict:
    """Mean with upper/lower bands from the spread of paths above/below the mean.

    Upper band: mean + sqrt(mean of squared deviations of the paths above the
    mean); lower band symmetric.  A display convention, not a confidence band.
    """
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=0)
    dev = samples - mean
    above = dev > 0
    below = dev < 0
    with np.errstate(invalid="ignore", divide="ignore"):
        up = np.sqrt(np.where(above, dev**2, 0.0).sum(axis=0) / above.sum(axis=0))
        lo = np.sqrt(np.where(below, dev**2, 0.0).sum(axis=0) / below.sum(axis=0))
    return {"mean": mean.tolist(),
            "upper": (mean + np.nan_to_num(up)).tolist(),
            "lower": (mean - np.nan_to_num(lo)).tolist()}


def _run_chunk(args):
    sm, config, a, b = args
    return _simulate_chunk(sm, config, a, b)


def run_simulation(config: SimConfig, ensemble, market: Optional[MarketParams] = None, *,
                   keep_logZ_paths: Optional[int] = None, workers: int = 1,
                   chunk_size: Optional[int] = None) -> SimulationResult:
    """Simulate ``config.n_paths`` paths and collect arrays plus running Z statistics.

    ``keep_logZ_paths`` bounds how many full ``log Z*`` trajectories are kept
    (default: all when that is under ~50M floats).  ``workers > 1`` farms
    chunks out to processes; results are identical for any worker count.
    """
    sm = _prepare(config, ensemble, market)
    grid = config.grid
    G, n, P = grid.size, sm.ensemble.size, config.n_paths
    if keep_logZ_paths is None:
        keep_logZ_paths = P if P * G * n <= 50_000_000 else min(P, 1000)
    X_star = np.empty((P, G))
    X_cl = np.empty((P, G))
    Y = np.empty((P, G))
    n_jumps = np.empty(P, dtype=np.int64)
    Z_T = np.empty((P, n))
    logZ = np.empty((keep_logZ_paths, G, n))
    zacc = _Moments((G, n))
    first_jumps = []
    spans = _chunks(config, sm, chunk_size)

    def consume(ch: _Chunk):
        a = ch.start
        b = a + ch.X_star.shape[0]
        X_star[a:b], X_cl[a:b], Y[a:b] = ch.X_star, ch.X_cl, ch.Y
        n_jumps[a:b] = ch.n_jumps
        Z_T[a:b] = np.exp(ch.logZ[:, -1, :])
        if a < keep_logZ_paths:
            m = min(b, keep_logZ_paths)
            logZ[a:m] = ch.logZ[: m - a]
        zacc.add(np.exp(ch.logZ))
        for i in range(min(b, 5) - a if a < 5 else 0):
            first_jumps.append((ch.times[i, : ch.n_jumps[i]].copy(),
                                ch.marks[i, : ch.n_jumps[i]].copy()))

    if workers > 1 and len(spans) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for ch in pool.map(_run_chunk, [(sm, config, a, b) for a, b in spans]):
                consume(ch)
    else:
        for a, b in spans:
            consume(_simulate_chunk(sm, config, a, b))

    return SimulationResult(config=config, labels=list(sm.labels), grid=grid, X_star=X_star,
                            X_cl=X_cl, Y=Y, n_jumps=n_jumps, Z_T=Z_T, logZ=logZ,
                            Z_mean=zacc.mean, Z_var=zacc.var, first_jumps=first_jumps)


@dataclass
class KDECurve:
    abscissa: np.ndarray
    density: np.ndarray
    bandwidth: float


def silverman_bandwidth(samples: np.ndarray) -> float:
    x = np.asarray(samples, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.size ** (-0.2)


def terminal_kde(samples: Sequence[float], bandwidth: Optional[float] = None,
                 n_points: int = 512) -> KDECurve:
    """Gaussian kernel density estimate on ``[min - 3h, max + 3h]``.

    Default bandwidth is Silverman's rule ``0.9 min(sd, IQR/1.34) n**(-1/5)``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSampleError("KDE needs at least two samples")
    if not np.all(np.isfinite(x)):
        raise DegenerateSampleError("KDE samples must be finite")
    if np.ptp(x) == 0:
        raise DegenerateSampleError("KDE samples have zero variance")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise DegenerateSampleError("bandwidth must be positive")
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_points)
    dens = np.zeros(n_points)
    norm = 1.0 / (x.size * h * math.sqrt(2.0 * math.pi))
    step = max(1, 2_000_000 // n_points)
    for a in range(0, x.size, step):
        u = (grid[:, None] - x[None, a:a + step]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    return KDECurve(abscissa=grid, density=dens * norm, bandwidth=h)
