"""Config parsing, dispatch, artifacts, and exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from factorregime.cli import ConfigError, parse_config, run


def _write(tmp_path, name, doc):
    p = tmp_path / name
    with open(p, "w") as fh:
        json.dump(doc, fh)
    return p


def _sim_data(tmp_path, seed=3, **dgp):
    cfg = {"command": "simulate", "seed": seed,
           "dgp": {"T": 60, "N": 40, "K": 1, "d_x": 2, "phi0": [1.0, 0.3], **dgp}}
    rc = run(parse_config(_write(tmp_path, "sim.json", cfg)).__class__(
        **{**parse_config(_write(tmp_path, "sim.json", cfg)).__dict__,
           "out": str(tmp_path / "data")}))
    assert rc == 0
    return tmp_path / "data"


class TestParseConfig:
    def test_defaults_filled(self, tmp_path):
        data = _sim_data(tmp_path)
        p = _write(tmp_path, "est.json", {
            "command": "estimate",
            "y_csv": str(data / "y.csv"), "x_csv": str(data / "x.csv"),
            "factors_csv": str(data / "factors.csv")})
        cfg = parse_config(p)
        assert cfg.payload["space"]["tau1"] == 0.05
        assert cfg.payload["space"]["tau2"] == 0.95
        assert cfg.payload["solver"]["gap_tol"] == 1e-6

    def test_unknown_key_named(self, tmp_path):
        p = _write(tmp_path, "bad.json", {"command": "drift", "omegas": [1.0],
                                          "bogus_key": 1})
        with pytest.raises(ConfigError, match="bogus_key"):
            parse_config(p)

    def test_nested_unknown_key_named(self, tmp_path):
        p = _write(tmp_path, "bad.json", {"command": "montecarlo",
                                          "scenario": "oracle",
                                          "dgp": {"T": 50, "frobnicate": 2}})
        with pytest.raises(ConfigError, match="dgp.frobnicate"):
            parse_config(p)

    def test_missing_file_rejected(self, tmp_path):
        p = _write(tmp_path, "bad.json", {"command": "estimate",
                                          "y_csv": str(tmp_path / "nope.csv"),
                                          "x_csv": str(tmp_path / "nope.csv")})
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(p)

    def test_range_violation_names_path(self, tmp_path):
        p = _write(tmp_path, "bad.json", {"command": "montecarlo",
                                          "scenario": "oracle",
                                          "dgp": {"sigma_eps": -1.0}})
        with pytest.raises(ConfigError, match="dgp.sigma_eps"):
            parse_config(p)

    def test_unknown_command(self, tmp_path):
        p = _write(tmp_path, "bad.json", {"command": "explode"})
        with pytest.raises(ConfigError, match="command"):
            parse_config(p)


class TestRun:
    def test_estimate_noiseless_exit_zero(self, tmp_path):
        data = _sim_data(tmp_path, sigma_eps=1e-8)
        p = _write(tmp_path, "est.json", {
            "command": "estimate", "out": str(tmp_path / "out"),
            "y_csv": str(data / "y.csv"), "x_csv": str(data / "x.csv"),
            "factors_csv": str(data / "factors.csv")})
        cfg = parse_config(p)
        assert run(cfg) == 0
        doc = json.loads((tmp_path / "out" / "result.json").read_text())
        assert doc["result"]["objective"] == pytest.approx(0.0, abs=1e-10)
        assert doc["result"]["status"] == "Optimal"
        # round-trip invariants: d length matches T, config and seed embedded
        assert len(doc["result"]["d"]) == 60
        assert doc["config"]["space"]["tau1"] == 0.05
        assert "seed" in doc

    def test_infeasible_tau_window_exit_one(self, tmp_path):
        data = _sim_data(tmp_path)
        # an index that is always positive over a tiny gamma box
        F = np.loadtxt(data / "factors.csv", delimiter=",", ndmin=2)
        F[:, 0] = 5.0
        np.savetxt(data / "factors_pos.csv", F, delimiter=",")
        p = _write(tmp_path, "est.json", {
            "command": "estimate", "out": str(tmp_path / "out2"),
            "y_csv": str(data / "y.csv"), "x_csv": str(data / "x.csv"),
            "factors_csv": str(data / "factors_pos.csv"),
            "space": {"gamma2_lo": [-1.0], "gamma2_hi": [1.0]}})
        assert run(parse_config(p)) == 1
        doc = json.loads((tmp_path / "out2" / "result.json").read_text())
        assert doc["result"]["status"] == "Infeasible"

    def test_montecarlo_smoke_writes_report_and_figure(self, tmp_path):
        p = _write(tmp_path, "mc.json", {
            "command": "montecarlo", "scenario": "oracle", "reps": 5,
            "out": str(tmp_path / "mc"),
            "dgp": {"T": 50, "N": 20, "K": 1, "phi0": [1.0, 0.3]}})
        assert run(parse_config(p)) == 0
        doc = json.loads((tmp_path / "mc" / "result.json").read_text())
        assert doc["report"]["reps"] == 5
        assert (tmp_path / "mc" / "mc_report.csv").exists()
        assert (tmp_path / "mc" / "mc_report.png").exists()

    def test_drift_outputs(self, tmp_path):
        p = _write(tmp_path, "dr.json", {
            "command": "drift", "omegas": [0.0, 1.0, "inf"],
            "g_lo": -1.0, "g_hi": 1.0, "g_n": 11, "mc_draws": 5000,
            "out": str(tmp_path / "dr")})
        assert run(parse_config(p)) == 0
        lines = (tmp_path / "dr" / "drift.csv").read_text().strip().splitlines()
        assert lines[0] == "omega,g,A,mc_se"
        assert len(lines) == 1 + 3 * 11
        assert (tmp_path / "dr" / "drift.png").exists()
        doc = json.loads((tmp_path / "dr" / "result.json").read_text())
        assert len(doc["curves"]) == 3

    def test_bootstrap_command_with_dump(self, tmp_path):
        data = _sim_data(tmp_path, seed=8)
        p = _write(tmp_path, "b.json", {
            "command": "bootstrap", "out": str(tmp_path / "b"), "seed": 2,
            "y_csv": str(data / "y.csv"), "x_csv": str(data / "x.csv"),
            "factors_csv": str(data / "factors.csv"),
            "hypothesis": {"R": [[0.0, 1.0]], "r": [0.0]},
            "bootstrap": {"B": 19}, "dump_draws": True})
        assert run(parse_config(p)) == 0
        doc = json.loads((tmp_path / "b" / "result.json").read_text())
        assert 0.0 < doc["p_value"] <= 1.0
        draws = np.loadtxt(tmp_path / "b" / "lr_draws.csv", ndmin=2)
        assert len(draws) == doc["draws"]
        assert (tmp_path / "b" / "lr_bootstrap.png").exists()

    def test_select_factors_command(self, tmp_path):
        data = _sim_data(tmp_path, seed=12, K=2, phi0=[1.0, 0.8, 0.2])
        p = _write(tmp_path, "s.json", {
            "command": "select-factors", "out": str(tmp_path / "s"),
            "y_csv": str(data / "y.csv"), "x_csv": str(data / "x.csv"),
            "factors_csv": str(data / "factors.csv")})
        assert run(parse_config(p)) == 0
        doc = json.loads((tmp_path / "s" / "result.json").read_text())
        assert "active_set" in doc and "lambda" in doc

    def test_linearity_command(self, tmp_path):
        data = _sim_data(tmp_path, seed=4)
        p = _write(tmp_path, "l.json", {
            "command": "test-linearity", "out": str(tmp_path / "l"),
            "y_csv": str(data / "y.csv"), "x_csv": str(data / "x.csv"),
            "factors_csv": str(data / "factors.csv"), "B": 19})
        assert run(parse_config(p)) == 0
        doc = json.loads((tmp_path / "l" / "result.json").read_text())
        assert 0.0 < doc["p_value"] <= 1.0

    def test_panel_input_via_pca(self, tmp_path):
        data = _sim_data(tmp_path, seed=6)
        p = _write(tmp_path, "e.json", {
            "command": "estimate", "out": str(tmp_path / "e"),
            "y_csv": str(data / "y.csv"), "x_csv": str(data / "x.csv"),
            "panel_csv": str(data / "panel.csv"), "n_factors": 1})
        assert run(parse_config(p)) == 0
        doc = json.loads((tmp_path / "e" / "result.json").read_text())
        assert doc["estimated_factors"] is True


class TestEntryPoint:
    def test_console_script_mismatched_command_exit_two(self, tmp_path):
        p = _write(tmp_path, "dr.json", {"command": "drift", "omegas": [1.0]})
        proc = subprocess.run(
            [sys.executable, "-m", "factorregime.cli", "estimate",
             "--config", str(p)],
            capture_output=True, text=True)
        assert proc.returncode == 2
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        assert err["error"] == "ConfigError"

    def test_console_script_runs_drift(self, tmp_path):
        p = _write(tmp_path, "dr.json", {"command": "drift", "omegas": ["inf"],
                                         "g_n": 5, "mc_draws": 10})
        proc = subprocess.run(
            [sys.executable, "-m", "factorregime.cli", "drift",
             "--config", str(p), "--out", str(tmp_path / "o")],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "o" / "drift.csv").exists()

    def test_env_threads_honored_and_flag_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FACTORREGIME_THREADS", "3")
        p = _write(tmp_path, "dr.json", {"command": "drift", "omegas": [1.0]})
        cfg = parse_config(p)
        assert cfg.threads == 3
