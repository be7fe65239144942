import json
import os
from pathlib import Path

import jsonschema

from do_icbf.cli import (EXIT_BLOWUP, EXIT_CONFIG, EXIT_INFEASIBLE,
                         EXIT_INVALID, EXIT_OK, main)

SCHEMA = json.loads(
    (Path(__file__).resolve().parents[1] / "src" / "do_icbf" / "schemas"
     / "summary.schema.json").read_text()
)


def run_cli(*argv):
    return main(list(argv))


def load(path):
    return json.loads(Path(path).read_text())


def validate_summary(path):
    payload = load(path)
    jsonschema.validate(payload, SCHEMA)
    return payload


def test_run_acc_short_horizon(tmp_path):
    rc = run_cli("run", "--scenario", "acc", "--filter", "do_icbf",
                 "--t-end", "2.0", "--out", str(tmp_path))
    assert rc == EXIT_OK
    assert (tmp_path / "trajectory.csv").exists()
    summary = validate_summary(tmp_path / "summary.json")
    assert summary["kind"] == "run"
    assert summary["filter"] == "do_icbf"
    assert not summary["metrics"]["unsafe"]


def test_run_unfiltered_flags_unsafe(tmp_path):
    rc = run_cli("run", "--scenario", "acc", "--filter", "off",
                 "--t-end", "10.0", "--out", str(tmp_path))
    assert rc == EXIT_OK
    summary = validate_summary(tmp_path / "summary.json")
    assert summary["metrics"]["unsafe"] is True
    assert summary["metrics"]["barrier_min"]["h_x"] < 0.0


def test_run_emits_plot_script(tmp_path):
    rc = run_cli("run", "--scenario", "bicycle", "--t-end", "1.0",
                 "--dt", "1e-2", "--out", str(tmp_path), "--emit-plot")
    assert rc == EXIT_OK
    script = (tmp_path / "plot.gp").read_text()
    assert "trajectory.csv" in script
    assert "multiplot" in script
    assert "circle at 0,0" in script


def test_run_csv_is_byte_identical_across_reruns(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        rc = run_cli("run", "--scenario", "acc", "--t-end", "1.0",
                     "--seed", "42", "--out", str(out))
        assert rc == EXIT_OK
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_run_csv_header_layout(tmp_path):
    rc = run_cli("run", "--scenario", "acc", "--t-end", "0.1", "--dt", "1e-2",
                 "--out", str(tmp_path))
    assert rc == EXIT_OK
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header == ("t,x0,x1,x2,u0,phi0,vstar0,d0,dhat0,"
                      "b_h_x,b_h_e,b_h_u,slack_h_u,slack_h_e,c_margin,infeasible")


def test_check_example1_lists_the_boundary_counterexample(tmp_path):
    rc = run_cli("check", "--scenario", "example1", "--out", str(tmp_path))
    assert rc == EXIT_INVALID
    report = load(tmp_path / "validity.json")
    assert report["valid"] is False
    assert any(c["x"] == [4.0] and c["u"] == [0.0]
               for c in report["counterexamples"])


def test_check_bicycle_is_valid_degree_two(tmp_path):
    rc = run_cli("check", "--scenario", "bicycle", "--out", str(tmp_path))
    assert rc == EXIT_OK
    report = load(tmp_path / "validity.json")
    assert report["valid"] is True
    assert report["relative_degree"] == 2


def test_check_acc_is_valid(tmp_path):
    rc = run_cli("check", "--scenario", "acc", "--out", str(tmp_path))
    assert rc == EXIT_OK


def test_check_empty_barrier_selection_fails(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "schema": 1, "scenario": "example1", "check": {"barriers": []},
        "out": str(tmp_path),
    }))
    rc = run_cli("check", "--config", str(cfg))
    assert rc == EXIT_CONFIG


def test_compare_acc_contrast(tmp_path):
    rc = run_cli("compare", "--scenario", "acc", "--t-end", "20.0",
                 "--out", str(tmp_path))
    assert rc == EXIT_OK
    summary = validate_summary(tmp_path / "summary.json")
    assert summary["kind"] == "compare"
    assert summary["modes"] == ["do_icbf", "icbf"]
    assert summary["per_mode"]["do_icbf"]["barrier_min"]["h_x"] >= -1e-3
    assert summary["per_mode"]["icbf"]["barrier_min"]["h_x"] < 0.0
    assert (tmp_path / "trajectory_do_icbf.csv").exists()
    assert (tmp_path / "trajectory_icbf.csv").exists()


def test_compare_bicycle_baseline_enters_disk(tmp_path):
    rc = run_cli("compare", "--scenario", "bicycle", "--t-end", "60.0",
                 "--out", str(tmp_path))
    assert rc == EXIT_OK
    summary = validate_summary(tmp_path / "summary.json")
    assert summary["modes"] == ["high_order", "off"]
    assert summary["per_mode"]["high_order"]["barrier_min"]["b0"] >= -1e-3
    assert summary["per_mode"]["off"]["barrier_min"]["b0"] < 0.0


def test_compare_identical_modes_is_degenerate(tmp_path):
    rc = run_cli("compare", "--scenario", "acc", "--filter", "off",
                 "--baseline", "off", "--out", str(tmp_path))
    assert rc == EXIT_CONFIG


def test_exit_codes_partition(tmp_path):
    # 0: clean run
    assert run_cli("run", "--scenario", "acc", "--t-end", "0.5",
                   "--out", str(tmp_path / "ok")) == EXIT_OK
    # 1: unreadable config
    assert run_cli("run", "--config", str(tmp_path / "missing.json")) == EXIT_CONFIG
    # 1: config without schema tag
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert run_cli("run", "--config", str(bad)) == EXIT_CONFIG
    # 1: output path already exists as a file
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert run_cli("run", "--scenario", "acc", "--t-end", "0.5",
                   "--out", str(blocker)) == EXIT_CONFIG
    # 2: infeasible filter (state barrier already failing at the start point)
    cfg = tmp_path / "infeasible.json"
    cfg.write_text(json.dumps({
        "schema": 1, "scenario": "example1", "filter": "do_icbf",
        "t_end": 1.0, "overrides": {"initial_x": [3.9]},
        "out": str(tmp_path / "inf"),
    }))
    assert run_cli("run", "--config", str(cfg)) == EXIT_INFEASIBLE
    # 3: numerical blow-up (absurd step size on an unstable loop)
    assert run_cli("run", "--scenario", "acc", "--filter", "off", "--dt", "2.0",
                   "--t-end", "2000", "--out", str(tmp_path / "blow")) == EXIT_BLOWUP
    # 4: validity counterexamples
    assert run_cli("check", "--scenario", "example1",
                   "--out", str(tmp_path / "chk")) == EXIT_INVALID


def test_env_var_default_outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("DO_ICBF_OUT", str(tmp_path / "from-env"))
    rc = run_cli("run", "--scenario", "acc", "--t-end", "0.2", "--dt", "1e-2")
    assert rc == EXIT_OK
    assert (tmp_path / "from-env" / "summary.json").exists()


def test_config_file_overrides_and_flags_win(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "schema": 1, "scenario": "acc", "filter": "off", "t_end": 0.5,
        "dt": 1e-2, "out": str(tmp_path / "a"),
        "overrides": {"disturbance": {"kind": "sinusoid", "amplitude": 1.0,
                                      "omega": 0.5}},
    }))
    rc = run_cli("run", "--config", str(cfg), "--filter", "do_icbf",
                 "--out", str(tmp_path / "b"))
    assert rc == EXIT_OK
    summary = validate_summary(tmp_path / "b" / "summary.json")
    assert summary["filter"] == "do_icbf"  # the flag beat the file
    assert not (tmp_path / "a").exists()
