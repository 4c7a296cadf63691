"""Command-line entry point: ``riskshare <command> [options]``.

Every command writes its outputs, a set of PNG figures and a ``manifest.json``
(inputs, seed, tool version, wall-clock times, and a SHA-256 of every output)
into ``--out``.  Outputs other than the manifest are byte-reproducible.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .compensators import (
    DomainError,
    InfeasibleModelPairError,
    QuadratureError,
    check_assumption_1,
    check_assumption_2,
    load_ensemble,
    save_ensemble,
)
from .controls import cession_diagnostic, load_market

logger = logging.getLogger("riskshare")

EXIT_OK = 0
EXIT_SCHEMA = 3
EXIT_FEASIBILITY = 4
EXIT_NUMERICAL = 5


class FeasibilityFailure(Exception):
    """An ensemble failed a feasibility check requested by the command."""


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: Optional[int]
    out_dir: str
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__
    started: str = ""
    finished: str = ""
    exit_code: Optional[int] = None

    def add_input(self, role: str, path) -> None:
        if path is not None:
            self.inputs[role] = {"path": str(path), "sha256": _sha256(Path(path))}

    def add_output(self, path: Path) -> None:
        self.outputs.append({"path": path.name, "sha256": _sha256(path),
                             "bytes": path.stat().st_size})

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2) + "\n")
        return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _num(x) -> str:
    """Shortest round-trip decimal form (17 significant digits when needed)."""
    return repr(float(x))


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, default=_json_default) + "\n")
    return path


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _num(v) for v in row])
    return path


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text: str, horizon: float) -> np.ndarray:
    """``--grid``: an integer step count or explicit comma-separated times."""
    text = text.strip()
    if "," not in text:
        try:
            n = int(text)
        except ValueError:
            raise DomainError(f"--grid must be a step count or a list of times, got {text!r}")
        if n < 1:
            raise DomainError("--grid step count must be at least 1")
        return np.linspace(0.0, horizon, n + 1)
    return np.asarray(_float_list(text))


def _load_inputs(args, manifest: RunManifest, market: bool = True):
    ens = load_ensemble(args.ensemble)
    manifest.add_input("ensemble", args.ensemble)
    mk = None
    if market:
        mk = load_market(args.market)
        manifest.add_input("market", args.market)
    return ens, mk


def _require_feasible(ens, assumption_2: bool = False) -> None:
    reports = [check_assumption_1(ens)] + ([check_assumption_2(ens)] if assumption_2 else [])
    for rep in reports:
        if not rep.passed:
            idx = ", ".join("/".join(f[0]) for f in rep.failures[:5])
            raise FeasibilityFailure(f"{rep.name} fails for index {idx}")


# commands return (files written, exit code)


def cmd_fit(args, out: Path, manifest: RunManifest) -> tuple:
    from .fitting import cv_fit, read_policies
    from .plotting import plot_fit_scatter

    if not 0.0 < args.fraction <= 1.0:
        raise DomainError(f"--fraction must lie in (0, 1], got {args.fraction!r}")
    tab = read_policies(args.data)
    manifest.add_input("data", args.data)
    res = cv_fit(tab, n_models=args.n_models, fraction=args.fraction, seed=args.seed)
    files = [save_ensemble(res.ensemble, out / "ensemble.json")]
    sc = res.scatter()
    files.append(_write_csv(out / "fit_scatter.csv", ("model", "rate", "shape", "scale"),
                            [(str(k + 1), r, s, c) for k, (r, s, c) in
                             enumerate(zip(sc["rate"], sc["shape"], sc["scale"]))]))
    shp, scl = np.asarray(sc["shape"]), np.asarray(sc["scale"])
    # undefined for fewer than three fits or identical fits (fraction 1)
    shape_scale_corr = math.nan
    if len(shp) > 2 and shp.std() > 0 and scl.std() > 0:
        shape_scale_corr = float(np.corrcoef(shp, scl)[0, 1])
    summary = {
        "counterparty_fit": res.full_fit.to_dict(),
        "subsample_size": res.subsample_size,
        "n_models": args.n_models,
        "shape_scale_correlation": shape_scale_corr,
        "assumption_1": check_assumption_1(res.ensemble).to_dict(),
        "assumption_2": check_assumption_2(res.ensemble).to_dict(),
    }
    files.append(_write_json(out / "fit_summary.json", summary))
    files.append(plot_fit_scatter(sc, res.full_fit.model.to_dict(), out / "fit_scatter.png"))
    return files, EXIT_OK


def cmd_check(args, out: Path, manifest: RunManifest) -> tuple:
    ens, _ = _load_inputs(args, manifest, market=False)
    a1 = check_assumption_1(ens)
    a2 = check_assumption_2(ens)
    report = {"passed": a1.passed and a2.passed, "assumption_1": a1.to_dict(),
              "assumption_2": a2.to_dict()}
    files = [_write_json(out / "feasibility.json", report)]
    print(f"assumption 1: {'pass' if a1.passed else 'FAIL'}; "
          f"assumption 2: {'pass' if a2.passed else 'FAIL'}")
    if not report["passed"]:
        for rep in (a1, a2):
            for idx, s, c in rep.failures:
                print(f"  {rep.name} {'/'.join(idx)}: shape_ok={s} scale_ok={c}")
        return files, EXIT_FEASIBILITY
    return files, EXIT_OK


def cmd_simulate(args, out: Path, manifest: RunManifest) -> tuple:
    from .plotting import plot_envelope, plot_kde
    from .simulate import SimConfig, envelope, run_simulation, terminal_kde

    ens, mk = _load_inputs(args, manifest)
    _require_feasible(ens)
    grid = _grid(args.grid, mk.T)
    cfg = SimConfig(args.measure, args.paths, args.seed, tuple(grid))
    res = run_simulation(cfg, ens, mk, workers=args.workers,
                         keep_logZ_paths=min(args.paths, args.path_csv_limit))
    files = []
    labels = res.labels
    header = ["path_id", "time", "X_star", "X_cl", "Y"] + [f"logZ_{lab}" for lab in labels]
    n_out = min(args.paths, args.path_csv_limit)

    def rows():
        for p in range(n_out):
            for g, t in enumerate(res.grid):
                yield [str(p), t, res.X_star[p, g], res.X_cl[p, g], res.Y[p, g],
                       *res.logZ[p, g]]

    files.append(_write_csv(out / "paths.csv", header, rows()))
    files.append(_write_json(out / "summary.json", res.summary()))
    kdes = {}
    for name, arr in (("X_star", res.X_star), ("X_cl", res.X_cl), ("Y", res.Y)):
        try:
            k = terminal_kde(arr[:, -1])
        except ValueError as exc:
            logger.warning("no KDE for %s: %s", name, exc)
            continue
        kdes[name] = k
        files.append(_write_csv(out / f"kde_{name}.csv", ("abscissa", "density"),
                                zip(k.abscissa, k.density)))
    if kdes:
        files.append(plot_kde({k: v for k, v in kdes.items() if k != "Y"} or kdes,
                              out / "kde_terminal_wealth.png"))
    env_rows = []
    for name, arr in (("X_star", res.X_star), ("X_cl", res.X_cl)):
        env = envelope(arr)
        files.append(plot_envelope(res.grid, env, out / f"paths_{name}.png",
                                   sample_paths=arr[: min(20, res.n_paths)], ylabel=name))
        env_rows += [(name, t, m, u, lo) for t, m, u, lo in
                     zip(res.grid, env["mean"], env["upper"], env["lower"])]
    files.append(_write_csv(out / "envelopes.csv", ("series", "time", "mean", "upper", "lower"),
                            env_rows))
    return files, EXIT_OK


def cmd_moments(args, out: Path, manifest: RunManifest) -> tuple:
    from .moments import moment_report

    ens, mk = _load_inputs(args, manifest)
    times = _float_list(args.times) if args.times else [mk.T]
    reports = [moment_report(args.measure, t, ens, mk).to_dict() for t in times]
    return [_write_json(out / "moments.json", {"measure": args.measure, "reports": reports})], EXIT_OK


def cmd_price(args, out: Path, manifest: RunManifest) -> tuple:
    from .plotting import plot_pricing_scan, plot_theta_sweep
    from .pricing import eta_star_one_model, optimize_eta, theta_sweep

    ens, mk = _load_inputs(args, manifest)
    res = optimize_eta(ens, mk, eta_max=args.eta_max)
    report = res.to_dict()
    if ens.is_single_model:
        report["eta_star_closed_form"] = eta_star_one_model(ens, mk)
    files = [_write_csv(out / "pricing_scan.csv", ("eta", "expected_wealth"), res.scan),
             plot_pricing_scan(res.scan, res.eta_star, out / "pricing_scan.png")]
    if args.theta_sweep:
        rows = theta_sweep(ens, mk, _float_list(args.theta_sweep), eta_max=args.eta_max)
        report["theta_sweep"] = [{"theta": t, "eta_star": e, "expected_wealth": v}
                                 for t, e, v in rows]
        files.append(_write_csv(out / "theta_sweep.csv",
                                ("theta", "eta_star", "expected_wealth"), rows))
        files.append(plot_theta_sweep(rows, out / "theta_sweep.png"))
    files.insert(0, _write_json(out / "pricing.json", report))
    return files, EXIT_OK


def cmd_verify(args, out: Path, manifest: RunManifest) -> tuple:
    from .verify import verification_report

    ens, mk = _load_inputs(args, manifest)
    _require_feasible(ens)
    rep = verification_report(ens, mk, n_perturbations=args.n_perturbations, seed=args.seed)
    rep["cession_diagnostic"] = [cession_diagnostic(t, np.ones(ens.size), ens, mk)
                                 for t in (0.0, 0.5 * mk.T)]
    files = [_write_json(out / "verification.json", rep)]
    print(f"verification {'passed' if rep['passed'] else 'FAILED'}: "
          f"max |A^(a,b*)J| = {rep['max_abs_beta_fixed']:.3e}, "
          f"min A^(a*,b)J = {rep['min_alpha_fixed']:.3e}")
    return files, EXIT_OK if rep["passed"] else EXIT_NUMERICAL


COMMANDS = {
    "fit": cmd_fit,
    "check": cmd_check,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "price": cmd_price,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskshare", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, market=True, seed=False):
        sp.add_argument("--ensemble", required=True, help="ensemble JSON file")
        if market:
            sp.add_argument("--market", required=True, help="market parameters JSON file")
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="master random seed")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("fit", help="fit the counterparty and cross-validation models")
    sp.add_argument("--data", required=True, help="policy CSV")
    sp.add_argument("--n-models", type=int, default=100)
    sp.add_argument("--fraction", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("check", help="feasibility report for an ensemble")
    common(sp, market=False)

    sp = sub.add_parser("simulate", help="Monte Carlo paths, summaries and KDEs")
    common(sp, seed=True)
    sp.add_argument("--paths", type=int, default=10_000)
    sp.add_argument("--grid", default="50", help="step count or comma-separated times")
    sp.add_argument("--measure", default="Q*", help="Q*, P_C or P_k")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--path-csv-limit", type=int, default=100,
                    help="number of paths written to paths.csv")

    sp = sub.add_parser("moments", help="closed-form moments")
    common(sp)
    sp.add_argument("--measure", default="Q*")
    sp.add_argument("--times", default=None, help="comma-separated times (default T)")

    sp = sub.add_parser("price", help="optimal safety loading of the counterparty")
    common(sp)
    sp.add_argument("--eta-max", type=float, default=1.0)
    sp.add_argument("--theta-sweep", default=None, help="comma-separated theta values")

    sp = sub.add_parser("verify", help="numerical saddle-point check")
    common(sp, seed=True)
    sp.add_argument("--n-perturbations", type=int, default=100)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command=args.command, argv=argv, seed=getattr(args, "seed", None),
                           out_dir=str(out), started=_now())
    code = EXIT_OK
    try:
        files, code = COMMANDS[args.command](args, out, manifest)
        for f in files:
            manifest.add_output(Path(f))
    except FeasibilityFailure as exc:
        print(f"feasibility failure: {exc}", file=sys.stderr)
        code = EXIT_FEASIBILITY
    except InfeasibleModelPairError as exc:
        print(f"feasibility failure: {exc}", file=sys.stderr)
        code = EXIT_FEASIBILITY
    except (QuadratureError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except (ValueError, KeyError, json.JSONDecodeError, OSError) as exc:
        # schema and domain errors of the inputs (SchemaError and DomainError are ValueErrors)
        print(f"input error: {exc}", file=sys.stderr)
        code = EXIT_SCHEMA
    manifest.finished = _now()
    manifest.exit_code = code
    manifest.write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
