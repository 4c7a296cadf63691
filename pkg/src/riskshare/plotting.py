"""Static figures written next to the CSV/JSON outputs of the command-line tool."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no version or timestamp chunks, so identical data give identical files
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_kde(curves: Mapping[str, object], path, xlabel: str = "terminal wealth") -> Path:
    """Overlay kernel density curves (objects with ``abscissa`` and ``density``)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, c in curves.items():
        ax.plot(c.abscissa, c.density, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    ax.legend()
    return _save(fig, path)


def plot_envelope(grid: np.ndarray, env: Mapping[str, Sequence[float]], path,
                  sample_paths: Optional[np.ndarray] = None, ylabel: str = "wealth") -> Path:
    """Mean path with upper/lower bands, plus a few sample paths in grey."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if sample_paths is not None:
        for p in sample_paths:
            ax.plot(grid, p, color="0.75", lw=0.6)
    ax.plot(grid, env["mean"], color="C0", label="mean")
    ax.plot(grid, env["upper"], color="C0", ls="--", label="mean +/- spread")
    ax.plot(grid, env["lower"], color="C0", ls="--")
    ax.set_xlabel("time")
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save(fig, path)


def plot_fit_scatter(scatter: Mapping[str, Sequence[float]], counterparty: Mapping[str, float],
                     path) -> Path:
    """Pairwise scatter of fitted (rate, shape, scale) with the full-data fit marked."""
    pairs = [("shape", "scale"), ("rate", "scale"), ("rate", "shape")]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.8))
    for ax, (a, b) in zip(axes, pairs):
        ax.scatter(scatter[a], scatter[b], s=10, alpha=0.7, label="subsample fits")
        ax.scatter([counterparty[a]], [counterparty[b]], color="C3", marker="x", s=60,
                   label="full data")
        ax.set_xlabel(a)
        ax.set_ylabel(b)
    axes[0].legend()
    return _save(fig, path)


def plot_pricing_scan(scan: Sequence[Sequence[float]], eta_star: float, path) -> Path:
    eta, val = np.asarray(scan, dtype=float).T
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(eta, val)
    ax.axvline(eta_star, color="C3", ls=":", label=f"eta* = {eta_star:.6g}")
    ax.set_xlabel("safety loading eta")
    ax.set_ylabel("expected counterparty wealth")
    ax.legend()
    return _save(fig, path)


def plot_theta_sweep(rows: Sequence[Sequence[float]], path) -> Path:
    arr = np.asarray(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(arr[:, 0], arr[:, 1], marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("ambiguity penalty theta")
    ax.set_ylabel("optimal safety loading eta*")
    return _save(fig, path)
