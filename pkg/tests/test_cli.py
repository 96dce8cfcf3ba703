import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from caginalp.artifacts import read_csv
from caginalp.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_VERIFY, main
from caginalp.config import load_config
from caginalp.forward import as_control_array, solve_state

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
DATA = Path(__file__).resolve().parent / "data"


def run(*args, out=None):
    argv = list(args) + (["--out", str(out)] if out is not None else []) + ["--quiet"]
    return main(argv)


def manifest(out):
    return json.loads((Path(out) / "manifest.json").read_text())


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_simulate_zero_data(tmp_path):
    code = run("simulate", "--config", str(CONFIGS / "zero_data.ini"), out=tmp_path)
    assert code == EXIT_OK
    _, body = read_csv(str(tmp_path / "trajectory.csv"))
    assert np.all(body[:, -2:] == 0)
    _, coef = read_csv(str(tmp_path / "coefficients.csv"))
    assert np.all(coef[:, 2:] == 0)
    m = manifest(tmp_path)
    cfg_bytes = (CONFIGS / "zero_data.ini").read_bytes()
    assert m["config_sha256"] == hashlib.sha256(cfg_bytes).hexdigest()
    assert m["exit_code"] == 0 and m["termination"] == "completed"
    assert set(m["outputs"]) == {"trajectory.csv", "coefficients.csv", "diagnostics.csv"}
    assert {"A4_ok", "A8_ok", "A10_ok"} <= set(m["guard"])
    assert m["bounds"] == {"sup_theta_vrho": 0.0, "sum_tau_dphi2": 0.0, "integral_F1": 0.0, "sup_abs_F_third": 0.0}


def test_obstacle_exact_is_config_error(tmp_path, capsys):
    code = run("simulate", "--config", str(DATA / "obstacle_exact.ini"), out=tmp_path)
    assert code == EXIT_CONFIG
    rec = last_error(capsys)
    assert rec["exit_code"] == 1 and "double_obstacle" in rec["message"] and "exact" in rec["message"]


def test_unknown_key_is_config_error(tmp_path, capsys):
    assert run("simulate", "--config", str(DATA / "unknown_key.ini"), out=tmp_path) == EXIT_CONFIG
    assert last_error(capsys)["error"] == "ConfigError"


def test_missing_config_is_config_error(tmp_path, capsys):
    assert run("simulate", "--config", str(tmp_path / "nope.ini"), out=tmp_path / "o") == EXIT_CONFIG
    assert last_error(capsys)["exit_code"] == 1


@pytest.mark.filterwarnings("ignore:tau \\* Lip")
def test_log_escape_is_numerical_error(tmp_path, capsys):
    code = run("simulate", "--config", str(DATA / "log_escape.ini"), out=tmp_path)
    assert code == EXIT_NUMERICAL
    rec = last_error(capsys)
    assert rec["error"] == "DomainEscape" and rec["step"] >= 1
    assert manifest(tmp_path)["exit_code"] == 2


def test_simulate_deterministic(tmp_path):
    cfg = str(CONFIGS / "generic_log.ini")
    for k in ("a", "b"):
        assert run("simulate", "--config", cfg, "--seed", "3", out=tmp_path / k) == EXIT_OK
    for name in ("trajectory.csv", "coefficients.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_round_trip(tmp_path):
    cfg_path = str(CONFIGS / "generic_log.ini")
    assert run("simulate", "--config", cfg_path, out=tmp_path) == EXIT_OK
    cfg = load_config(cfg_path)
    tr = solve_state(cfg.state, as_control_array(cfg.initial_control, cfg.state))
    header, coef = read_csv(str(tmp_path / "coefficients.csv"))
    N = tr.theta.shape[1]
    assert header[:3] == ["step", "time", "theta_1"]
    assert np.array_equal(coef[:, 2:2 + N], tr.theta)
    assert np.array_equal(coef[:, 2 + N:], tr.phi)
    assert np.array_equal(coef[:, 1], tr.times)
    header, diag = read_csv(str(tmp_path / "diagnostics.csv"))
    for j, key in enumerate(header[2:], start=2):
        assert np.array_equal(diag[:, j], tr.diagnostics[key])
    _, traj = read_csv(str(tmp_path / "trajectory.csv"))
    assert np.array_equal(traj[:, -1].reshape(tr.phi_grid.shape), tr.phi_grid)


def test_tau_halvings_refines_grid(tmp_path):
    assert run("simulate", "--config", str(CONFIGS / "zero_data.ini"), "--tau-halvings", "2",
               out=tmp_path) == EXIT_OK
    _, coef = read_csv(str(tmp_path / "coefficients.csv"))
    assert coef.shape[0] == 4 * 20 + 1


def test_negative_halvings_rejected(tmp_path):
    assert run("simulate", "--config", str(CONFIGS / "zero_data.ini"), "--tau-halvings", "-1",
               out=tmp_path) == EXIT_CONFIG


def test_optimize_beta5_only(tmp_path):
    assert run("optimize", "--config", str(CONFIGS / "beta5_only.ini"), out=tmp_path) == EXIT_OK
    m = manifest(tmp_path)
    assert m["iterations"] <= 2 and m["termination"] == "converged"
    header, u = read_csv(str(tmp_path / "control.csv"))
    assert header[-1] == "u" and np.all(u[:, -1] == 0.25)
    _, hist = read_csv(str(tmp_path / "history.csv"))
    assert np.all(np.diff(hist[:, 1]) <= 0)


def test_optimize_tracking(tmp_path):
    assert run("optimize", "--config", str(CONFIGS / "tracking_regular.ini"), out=tmp_path) == EXIT_OK
    m = manifest(tmp_path)
    assert m["stationarity"] <= 1e-6
    _, hist = read_csv(str(tmp_path / "history.csv"))
    assert np.all(np.diff(hist[:, 1]) <= 0)


def test_sweep_rejects_non_decreasing_schedule(tmp_path, capsys):
    cfg = str(CONFIGS / "obstacle_sweep.ini")
    for bad in ("0.5,0.5", "0.25,0.5", "1,abc"):
        assert run("sweep", "--config", cfg, "--schedule", bad, out=tmp_path / bad.replace(",", "_")) == EXIT_CONFIG
        assert last_error(capsys)["error"] == "ConfigError"


def test_sweep_short_schedule(tmp_path):
    cfg = str(CONFIGS / "obstacle_sweep.ini")
    assert run("sweep", "--config", cfg, "--schedule", "1,0.5,0.25", out=tmp_path) == EXIT_OK
    header, table = read_csv(str(tmp_path / "continuation.csv"))
    assert header[:6] == ["alpha", "cost", "a_R", "b_R", "increment_norm", "multiplier_dual_proxy"]
    assert table.shape[0] == 3 and np.all(table[:, 2] > -1) and np.all(table[:, 3] < 1)
    assert list(table[:, 0]) == [1.0, 0.5, 0.25]
    assert set(table[:, header.index("termination")]) == {"converged"}


def test_verify_failure_exit_code(tmp_path):
    text = (CONFIGS / "beta5_only.ini").read_text().replace("fd_relative_error = 1e-6", "fd_relative_error = 1e-6\n"
                                                             "suite_placeholder = 1")
    bad = tmp_path / "bad.ini"
    bad.write_text(text)
    assert run("verify", "--config", str(bad), out=tmp_path / "x") == EXIT_CONFIG
    strict = (CONFIGS / "generic_log.ini").read_text().replace("suite = fd_gradient, frechet, stability",
                                                               "suite = frechet\nfrechet_slope_min = 2.5\n"
                                                               "frechet_slope_max = 3.0")
    cfg = tmp_path / "strict.ini"
    cfg.write_text(strict)
    out = tmp_path / "v"
    assert run("verify", "--config", str(cfg), out=out) == EXIT_VERIFY
    assert manifest(out)["probes"] == {"frechet_remainder": "fail"}
    header, rows = read_csv(str(out / "frechet_remainder.csv"))
    assert header == ["remainder", "scale"] and rows.shape == (3, 2)
    assert "fail" in (out / "summary.csv").read_text()


def test_verify_beta5_only(tmp_path):
    assert run("verify", "--config", str(CONFIGS / "beta5_only.ini"), out=tmp_path) == EXIT_OK
    assert manifest(tmp_path)["probes"] == {"fd_gradient_check": "pass"}


def test_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("CAGINALP_OUTPUT_ROOT", str(tmp_path))
    assert run("simulate", "--config", str(CONFIGS / "zero_data.ini")) == EXIT_OK
    dirs = os.listdir(tmp_path)
    assert len(dirs) == 1 and dirs[0].startswith("simulate-")
    assert (tmp_path / dirs[0] / "manifest.json").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "caginalp", "simulate", "--config", str(CONFIGS / "zero_data.ini"),
                           "--out", str(tmp_path), "--quiet"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "caginalp", "--version"], capture_output=True, text=True, check=False)
    assert proc.stdout.startswith("caginalp ")
