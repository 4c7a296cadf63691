import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from riskshare.cli import EXIT_FEASIBILITY, EXIT_SCHEMA, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ENS = str(CONFIGS / "synthetic3_ensemble.json")
MKT = str(CONFIGS / "synthetic3_market.json")


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_check_passes_on_feasible_ensemble(tmp_path):
    code, out = run(tmp_path, "chk", "check", "--ensemble", ENS)
    assert code == 0
    assert json.loads((out / "feasibility.json").read_text())["passed"]


def test_check_flags_infeasible_ensemble(tmp_path):
    ens = json.loads(Path(ENS).read_text())
    ens["models"][0]["shape"] = 10.0  # shape far above 2 m_C - m_k allows
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(ens))
    code, out = run(tmp_path, "chk", "check", "--ensemble", str(path))
    assert code == EXIT_FEASIBILITY
    assert manifest(out)["exit_code"] == EXIT_FEASIBILITY


def test_simulate_outputs_and_reproducibility(tmp_path):
    args = ["simulate", "--ensemble", ENS, "--market", MKT, "--paths", "500",
            "--grid", "10", "--seed", "3"]
    code1, out1 = run(tmp_path, "a", *args)
    code2, out2 = run(tmp_path, "b", *args)
    assert code1 == code2 == 0
    for name in ("paths.csv", "summary.json", "kde_X_star.csv", "envelopes.csv",
                 "kde_terminal_wealth.png", "paths_X_star.png"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
    m = manifest(out1)
    assert m["seed"] == 3 and m["exit_code"] == 0
    for entry in m["outputs"]:
        digest = hashlib.sha256((out1 / entry["path"]).read_bytes()).hexdigest()
        assert digest == entry["sha256"]
    assert set(m["inputs"]) == {"ensemble", "market"}


def test_simulate_single_path_is_deterministic(tmp_path):
    args = ["simulate", "--ensemble", ENS, "--market", MKT, "--paths", "1", "--grid", "4"]
    code1, out1 = run(tmp_path, "a", *args)
    code2, out2 = run(tmp_path, "b", *args)
    assert code1 == code2 == 0
    assert (out1 / "paths.csv").read_bytes() == (out2 / "paths.csv").read_bytes()


def test_jump_counts_differ_between_measures(tmp_path):
    base = ["simulate", "--ensemble", ENS, "--market", MKT, "--paths", "4000", "--grid", "2"]
    _, out_p = run(tmp_path, "p", *base, "--measure", "P_C")
    _, out_q = run(tmp_path, "q", *base, "--measure", "Q*")
    jp = json.loads((out_p / "summary.json").read_text())["jump_count"]["mean"]
    jq = json.loads((out_q / "summary.json").read_text())["jump_count"]["mean"]
    assert jp == pytest.approx(1.0, abs=4 * np.sqrt(1.0 / 4000))
    # Q* intensity of the counterparty-model jumps is (1+eta) lambda_C
    assert jq == pytest.approx(1.2, abs=4 * np.sqrt(1.2 / 4000))


def test_explicit_time_grid(tmp_path):
    code, out = run(tmp_path, "g", "simulate", "--ensemble", ENS, "--market", MKT,
                    "--paths", "50", "--grid", "0,0.25,1")
    assert code == 0
    assert json.loads((out / "summary.json").read_text())["grid"] == [0.0, 0.25, 1.0]


def test_bad_grid_is_schema_error(tmp_path):
    code, _ = run(tmp_path, "g", "simulate", "--ensemble", ENS, "--market", MKT,
                  "--paths", "5", "--grid", "0,2,1")
    assert code == EXIT_SCHEMA


def test_moments_command(tmp_path):
    code, out = run(tmp_path, "m", "moments", "--ensemble", ENS, "--market", MKT,
                    "--times", "0.5,1")
    assert code == 0
    data = json.loads((out / "moments.json").read_text())
    assert data["measure"] == "Q*" and len(data["reports"]) == 2


def test_price_command_with_sweep(tmp_path):
    code, out = run(tmp_path, "p", "price", "--ensemble", ENS, "--market", MKT,
                    "--theta-sweep", "0.5,1,2,4")
    assert code == 0
    rep = json.loads((out / "pricing.json").read_text())
    assert 0.0 <= rep["eta_star"] <= 1.0
    rows = np.loadtxt(out / "theta_sweep.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(rows[:, 1]) >= -1e-9)
    assert (out / "pricing_scan.png").stat().st_size > 0


def test_verify_command(tmp_path):
    code, out = run(tmp_path, "v", "verify", "--ensemble", ENS, "--market", MKT,
                    "--n-perturbations", "5")
    assert code == 0
    assert json.loads((out / "verification.json").read_text())["passed"]


def test_fit_small_csv(tmp_path):
    csv = tmp_path / "p.csv"
    rows = ["policy_id,exposure,n_claims,avg_claim"]
    rows += [f"p{i},1.0,{i % 3},{0.0 if i % 3 == 0 else 10.0 + 3 * i}" for i in range(10)]
    csv.write_text("\n".join(rows) + "\n")
    code, out = run(tmp_path, "f", "fit", "--data", str(csv), "--n-models", "3",
                    "--fraction", "1.0")
    assert code == 0
    ens = json.loads((out / "ensemble.json").read_text())
    assert len(ens["models"]) == 3
    assert manifest(out)["inputs"]["data"]["sha256"] == hashlib.sha256(csv.read_bytes()).hexdigest()


def test_fit_missing_header_is_schema_error(tmp_path, capsys):
    csv = tmp_path / "p.csv"
    csv.write_text("exposure,n_claims,avg_claim\n1,0,0\n")
    code, _ = run(tmp_path, "f", "fit", "--data", str(csv))
    assert code == EXIT_SCHEMA
    assert "line 1" in capsys.readouterr().err


def test_fit_bad_fraction(tmp_path):
    code, _ = run(tmp_path, "f", "fit", "--data", str(CONFIGS / "synthetic_policies.csv"),
                  "--fraction", "0")
    assert code == EXIT_SCHEMA


def test_usage_error_exit_code(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--out", str(tmp_path)])
    assert exc.value.code == 2
