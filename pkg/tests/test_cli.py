"""End-to-end CLI runs: configs, exit codes, report and CSV contracts."""

import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from pgd_csma.cli import main


def run_cli(tmp_path, command, config, sub="out"):
    cfg_path = tmp_path / f"{sub}_config.json"
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    out_dir = tmp_path / sub
    code = main([command, "--config", str(cfg_path), "--out-dir", str(out_dir)])
    return code, out_dir


def read_report(out_dir, name):
    return json.loads((out_dir / name).read_text(encoding="utf-8"))


def read_csv(path):
    raw = path.read_bytes().decode("utf-8")
    lines = raw.split("\r\n")
    assert lines[0].startswith("# config: ")
    comment_cfg = json.loads(lines[0][len("# config: "):])
    rows = list(csv.reader(lines[1:-1]))
    return comment_cfg, rows[0], rows[1:]


class TestStationary:
    def test_happy_path(self, tmp_path):
        code, out = run_cli(tmp_path, "stationary",
                            {"graph": "path_3", "lambda": 1.0})
        assert code == 0
        rep = read_report(out, "stationary_report.json")
        assert rep["command"] == "stationary"
        assert rep["generator"] == "philox4x64"
        assert rep["results"]["space_size"] == 5
        assert rep["results"]["tv_product_vs_matrix"] <= 1e-10
        assert rep["results"]["detailed_balance_residual"] <= 1e-10
        # defaults are resolved into the embedded config
        assert "rule" in rep["config"]
        assert rep["config"]["rule"]["a"] == [0.5, 0.5, 0.5]
        assert "rule" in rep["config"]["defaulted_keys"]
        cfg_line, header, rows = read_csv(out / "stationary.csv")
        assert header == ["index", "mask", "members", "pi_product", "pi_matrix"]
        assert len(rows) == 5
        assert [int(r[1]) for r in rows] == [0, 1, 2, 4, 5]
        pis = [float(r[3]) for r in rows]
        np.testing.assert_allclose(pis, 0.2, atol=1e-12)

    def test_crlf_line_endings(self, tmp_path):
        code, out = run_cli(tmp_path, "stationary",
                            {"graph": "path_3", "lambda": 1.0})
        assert code == 0
        raw = (out / "stationary.csv").read_bytes()
        assert raw.count(b"\r\n") == raw.count(b"\n")

    def test_non_irreducible_exit_3(self, tmp_path, capsys):
        config = {
            "graph": "path_3",
            "lambda": 1.0,
            "rule": {"kind": "explicit", "schedules": [[0], [1]],
                     "probs": [0.5, 0.5]},
        }
        code, _ = run_cli(tmp_path, "stationary", config)
        assert code == 3
        err = capsys.readouterr().err
        assert "not irreducible" in err and "q_2 = 0" in err

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "stationary",
                          {"graph": "path_3", "lambda": 1.0, "bogus_key": 1})
        assert code == 2
        assert "unknown config keys: bogus_key" in capsys.readouterr().err

    def test_enumeration_limit_exit_4(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "stationary",
                          {"graph": "complete_25", "lambda": 1.0})
        assert code == 4
        assert "n=25" in capsys.readouterr().err

    def test_lambda_nu_exclusive(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "stationary",
                          {"graph": "path_3", "lambda": 1.0, "nu": 0.2})
        assert code == 2
        assert "exactly one of" in capsys.readouterr().err
        code, _ = run_cli(tmp_path, "stationary", {"graph": "path_3"}, sub="b")
        assert code == 2

    def test_nu_route_embeds_solved_lambda(self, tmp_path):
        code, out = run_cli(tmp_path, "stationary",
                            {"graph": "path_3", "nu": [0.3, 0.2, 0.3]})
        assert code == 0
        rep = read_report(out, "stationary_report.json")
        np.testing.assert_allclose(rep["config"]["lambda_solved"],
                                   [0.6, 0.64, 0.6], atol=1e-6)

    def test_graph_from_file(self, tmp_path):
        gpath = tmp_path / "g.txt"
        gpath.write_text("# tiny\n3\n0 1\n1 2\n", encoding="utf-8")
        code, out = run_cli(tmp_path, "stationary",
                            {"graph": {"file": str(gpath)}, "lambda": 1.0})
        assert code == 0
        assert read_report(out, "stationary_report.json")["results"]["space_size"] == 5

    def test_bad_graph_file_exit_2(self, tmp_path, capsys):
        gpath = tmp_path / "g.txt"
        gpath.write_text("3\n0 9\n", encoding="utf-8")
        code, _ = run_cli(tmp_path, "stationary",
                          {"graph": {"file": str(gpath)}, "lambda": 1.0})
        assert code == 2
        assert "line 2" in capsys.readouterr().err

    def test_erdos_requires_graph_seed(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "stationary",
                          {"graph": "erdos_6_0.4", "lambda": 1.0})
        assert code == 2
        assert "graph_seed" in capsys.readouterr().err
        code, out = run_cli(
            tmp_path, "stationary",
            {"graph": {"builtin": "erdos_6_0.4", "graph_seed": 3}, "lambda": 1.0},
            sub="b")
        assert code == 0


class TestConfigPlumbing:
    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["stationary", "--config", str(tmp_path / "absent.json"),
                     "--out-dir", str(tmp_path)])
        assert code == 2
        assert "cannot read config" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json", encoding="utf-8")
        code = main(["stationary", "--config", str(p),
                     "--out-dir", str(tmp_path)])
        assert code == 2
        assert "not valid JSON" in capsys.readouterr().err

    def test_config_must_be_object(self, tmp_path, capsys):
        p = tmp_path / "arr.json"
        p.write_text("[1, 2]", encoding="utf-8")
        code = main(["stationary", "--config", str(p),
                     "--out-dir", str(tmp_path)])
        assert code == 2

    def test_empty_seeds_rejected(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "stationary",
                          {"graph": "path_3", "lambda": 1.0, "seeds": []})
        assert code == 2
        assert "seeds" in capsys.readouterr().err

    def test_console_script_entrypoint(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"graph": "path_3", "lambda": 1.0}))
        proc = subprocess.run(
            [sys.executable, "-m", "pgd_csma.cli", "stationary",
             "--config", str(cfg), "--out-dir", str(tmp_path / "o")],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "stationary:" in proc.stdout


class TestMixing:
    def test_exact_mode_frozen_path3(self, tmp_path):
        code, out = run_cli(tmp_path, "mixing",
                            {"graph": "path_3", "lambda": 0.4, "horizon": 400})
        assert code == 0
        rep = read_report(out, "mixing_report.json")
        res = rep["results"]
        assert res["empirical_tmix"] == 8
        assert res["best_bound_tmix"] == 53
        assert not res["horizon_exhausted"]
        assert res["bounds"]["degree_over_q"]["bound_tmix"] == 131
        assert res["bounds"]["degree_over_q"]["applicable"]
        _, header, rows = read_csv(out / "tv_curve.csv")
        assert header[:2] == ["t", "tv"]
        assert set(header[2:]) == {"envelope_degree_over_q",
                                   "envelope_fugacity_over_q",
                                   "envelope_inverse_q"}
        # envelope dominates the exact curve on every emitted row
        for row in rows:
            tv = float(row[1])
            for cell in row[2:]:
                if cell != "N/A":
                    assert tv <= float(cell) + 1e-12

    def test_exact_mode_inapplicable_is_na(self, tmp_path):
        code, out = run_cli(tmp_path, "mixing",
                            {"graph": "path_3", "lambda": 5.0, "horizon": 50})
        assert code == 0
        rep = read_report(out, "mixing_report.json")
        assert rep["results"]["best_bound_tmix"] is None
        _, header, rows = read_csv(out / "tv_curve.csv")
        assert all(cell == "N/A" for cell in rows[0][2:])

    def test_exact_mode_complete_graph_column(self, tmp_path):
        code, out = run_cli(tmp_path, "mixing",
                            {"graph": "complete_3", "lambda": 1.0,
                             "horizon": 100})
        assert code == 0
        rep = read_report(out, "mixing_report.json")
        assert rep["results"]["complete_graph_bound"]["bound_tmix"] == 30
        _, header, rows = read_csv(out / "tv_curve.csv")
        assert header[-1] == "envelope_complete"
        for row in rows:
            assert float(row[1]) <= float(row[-1]) + 1e-12

    def test_exhausted_horizon_reported_in_band(self, tmp_path):
        code, out = run_cli(tmp_path, "mixing",
                            {"graph": "path_3", "lambda": 0.4, "horizon": 3})
        assert code == 0
        res = read_report(out, "mixing_report.json")["results"]
        assert res["horizon_exhausted"]
        assert res["empirical_tmix"] is None

    def test_coalescence_mode(self, tmp_path):
        code, out = run_cli(tmp_path, "mixing",
                            {"graph": "path_3", "lambda": 0.4,
                             "mode": "coalescence", "trials": 40,
                             "horizon": 2000, "seeds": [1, 2]})
        assert code == 0
        rep = read_report(out, "mixing_report.json")
        assert len(rep["results"]["per_seed"]) == 2
        _, header, rows = read_csv(out / "coalescence.csv")
        assert header == ["seed", "sample", "slots"]
        met = sum(1 for r in rows)
        unmet = sum(p["uncoalesced"] for p in rep["results"]["per_seed"])
        assert met + unmet == 80

    def test_bad_mode(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "mixing",
                          {"graph": "path_3", "lambda": 0.4, "mode": "magic"})
        assert code == 2


class TestFugacity:
    def test_happy_path(self, tmp_path):
        code, out = run_cli(tmp_path, "fugacity",
                            {"graph": "path_3", "nu": [0.3, 0.2, 0.3],
                             "rho": 0.8})
        assert code == 0
        rep = read_report(out, "fugacity_report.json")
        res = rep["results"]
        np.testing.assert_allclose(res["lambda"], [0.6, 0.64, 0.6], atol=1e-6)
        np.testing.assert_allclose(res["service_rates"], [0.3, 0.2, 0.3],
                                   atol=1e-8)
        assert res["fixed_point_max_gap"] <= 1e-6
        assert res["capacity"]["interior"]
        _, header, rows = read_csv(out / "rates.csv")
        assert header == ["link", "nu", "lambda", "r", "service_rate",
                          "idle_mass"]
        assert len(rows) == 3

    def test_boundary_exit_3(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "fugacity",
                          {"graph": "path_3", "nu": [0.3, 0.2, 0.3],
                           "rho": 0.5})
        assert code == 3
        assert "capacity region" in capsys.readouterr().err

    def test_nu_required(self, tmp_path, capsys):
        code, _ = run_cli(tmp_path, "fugacity", {"graph": "path_3"})
        assert code == 2
        assert "nu" in capsys.readouterr().err


class TestSimulateFixed:
    BASE = {
        "graph": "path_3",
        "nu": [0.2, 0.1, 0.2],
        "solve_targets": [0.3, 0.2, 0.3],
        "horizon": 30000,
        "window_count": 10,
        "seeds": [5],
    }

    def test_happy_path_with_bound(self, tmp_path):
        from pgd_csma import (FugacityVector, IntentRule, InterferenceGraph,
                              best_bound_tmix, per_queue_bound)
        code, out = run_cli(tmp_path, "simulate", dict(self.BASE))
        assert code == 0
        rep = read_report(out, "simulate_report.json")
        assert rep["config"]["mode"] == "fixed"
        np.testing.assert_allclose(rep["config"]["lambda_solved"],
                                   [0.6, 0.64, 0.6], atol=1e-6)
        assert "warmup" in rep["config"]["defaulted_keys"]
        res = rep["results"]
        fug = FugacityVector(np.array(rep["config"]["lambda_solved"]))
        expect_btm = best_bound_tmix(InterferenceGraph.path(3), fug,
                                     IntentRule.uniform(3, 0.5))
        assert res["bound"]["bound_tmix"] == expect_btm
        np.testing.assert_allclose(
            res["bound"]["per_queue_bound"],
            per_queue_bound(expect_btm, np.array(res["bound"]["service_rates"]),
                            np.array(self.BASE["nu"])),
            atol=1e-9)
        entry = res["per_seed"][0]
        assert entry["bound_holds"]
        assert entry["stability"]["stable"] in (True, False)
        _, header, rows = read_csv(out / "windows.csv")
        assert header == ["seed", "window", "mean_q_0", "mean_q_1",
                          "mean_q_2", "total"]
        assert len(rows) == 10

    def test_byte_identical_reruns(self, tmp_path):
        cfg = dict(self.BASE, horizon=8000, record_trace=True)
        code_a, out_a = run_cli(tmp_path, "simulate", cfg, sub="a")
        code_b, out_b = run_cli(tmp_path, "simulate", cfg, sub="b")
        assert code_a == code_b == 0
        for name in ("simulate_report.json", "windows.csv", "trace.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_lambda_and_targets_exclusive(self, tmp_path, capsys):
        cfg = dict(self.BASE)
        cfg["lambda"] = [0.6, 0.64, 0.6]
        code, _ = run_cli(tmp_path, "simulate", cfg)
        assert code == 2
        assert "exactly one" in capsys.readouterr().err
        cfg2 = dict(self.BASE)
        del cfg2["solve_targets"]
        code, _ = run_cli(tmp_path, "simulate", cfg2, sub="b")
        assert code == 2

    def test_direct_lambda_route(self, tmp_path):
        cfg = dict(self.BASE, horizon=5000)
        del cfg["solve_targets"]
        cfg["lambda"] = [0.6, 0.64, 0.6]
        code, out = run_cli(tmp_path, "simulate", cfg)
        assert code == 0
        rep = read_report(out, "simulate_report.json")
        assert rep["config"]["lambda"] == [0.6, 0.64, 0.6]

    def test_trace_rows(self, tmp_path):
        cfg = dict(self.BASE, horizon=50, warmup=0, window_count=5,
                   record_trace=True)
        code, out = run_cli(tmp_path, "simulate", cfg)
        assert code == 0
        _, header, rows = read_csv(out / "trace.csv")
        assert header[:3] == ["seed", "slot", "schedule_mask"]
        assert len(rows) == 50
        assert [int(r[1]) for r in rows[:3]] == [1, 2, 3]

    def test_infeasible_targets_exit_3(self, tmp_path):
        cfg = dict(self.BASE, solve_targets=[0.6, 0.5, 0.6])
        code, _ = run_cli(tmp_path, "simulate", cfg)
        assert code == 3


class TestSimulateAdaptive:
    BASE = {
        "graph": "path_3",
        "mode": "adaptive",
        "nu": [0.05, 0.03, 0.05],
        "frames": 6,
        "B": math.log(0.9),
        "B_eps": -2.0,
        "frame_length_override": 400,
        "seeds": [3],
    }

    def test_happy_path(self, tmp_path):
        code, out = run_cli(tmp_path, "simulate", dict(self.BASE))
        assert code == 0
        rep = read_report(out, "simulate_report.json")
        assert rep["config"]["mode"] == "adaptive"
        assert rep["config"]["nu_min"] == 0.03  # defaulted to min(nu)
        assert "nu_min" in rep["config"]["defaulted_keys"]
        ctrl = rep["results"]["controller"]
        assert ctrl["T"] == 400
        assert ctrl["bound_tmix"] == rep["config"]["bound_tmix"]
        entry = rep["results"]["per_seed"][0]
        assert entry["caps_respected"]
        assert entry["nu_min_ok"]
        _, header, rows = read_csv(out / "frames.csv")
        assert len(rows) == 6
        assert header[:2] == ["seed", "frame"]
        assert "r_0" in header and "lambda_2" in header and "end_q_1" in header

    def test_equilibrium_start(self, tmp_path):
        cfg = dict(self.BASE, initial_queue="equilibrium", frames=4)
        code, out = run_cli(tmp_path, "simulate", cfg)
        assert code == 0
        rep = read_report(out, "simulate_report.json")
        assert rep["config"]["initial_queue"] == "equilibrium"

    def test_explicit_initial_queue(self, tmp_path):
        cfg = dict(self.BASE, initial_queue=[10, 5, 10], frames=3)
        code, out = run_cli(tmp_path, "simulate", cfg)
        assert code == 0
        rep = read_report(out, "simulate_report.json")
        assert rep["config"]["initial_queue"] == [10, 5, 10]

    def test_fractional_initial_queue_rejected(self, tmp_path, capsys):
        cfg = dict(self.BASE, initial_queue=[10.5, 5, 10], frames=3)
        code, _ = run_cli(tmp_path, "simulate", cfg)
        assert code == 2
        assert "integers" in capsys.readouterr().err

    def test_too_few_windows_rejected(self, tmp_path, capsys):
        cfg = dict(self.BASE, frames=2)
        code, _ = run_cli(tmp_path, "simulate", cfg)
        assert code == 2
        assert "at least 3 windows" in capsys.readouterr().err

    def test_missing_required_keys(self, tmp_path, capsys):
        cfg = dict(self.BASE)
        del cfg["B"]
        code, _ = run_cli(tmp_path, "simulate", cfg)
        assert code == 2
        assert "'B'" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        code_a, out_a = run_cli(tmp_path, "simulate", dict(self.BASE), sub="a")
        code_b, out_b = run_cli(tmp_path, "simulate", dict(self.BASE), sub="b")
        assert code_a == code_b == 0
        for name in ("simulate_report.json", "frames.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
