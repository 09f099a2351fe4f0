import json

import pytest

import blowup.cli as cli
from blowup.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from blowup.config import OUTPUT_ENV, RunConfig, bundled_config_names, parse_config_text
from blowup.errors import ConfigurationError, SolverFailure

SHORT = ["--octaves", "3", "--steps-per-octave", "8", "--k-max", "2"]


def write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def test_bundled_configs_present():
    assert {"single-ball", "hyperplane"} <= set(bundled_config_names())


def test_synth_run_writes_reports(tmp_path):
    out = tmp_path / "out"
    assert main(["synth", "single-ball", "--output-dir", str(out), "--prefix", "ball"] + SHORT) == EXIT_OK
    report = json.loads((out / "ball.json").read_text())
    assert report["schema"] == "blowup-run/1"
    assert report["config"]["k_max"] == 2
    assert "directory" not in report["config"]["output"]
    assert (out / "ball.csv").read_text().startswith("# schema: blowup-scale-series/1")
    assert (out / "ball.timings.json").exists()


def test_repeated_runs_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "single-ball", "--output-dir", str(tmp_path / name)] + SHORT) == EXIT_OK
    for suffix in ("csv", "json"):
        assert (tmp_path / "a" / f"single-ball.{suffix}").read_bytes() == (tmp_path / "b" / f"single-ball.{suffix}").read_bytes()


def test_failed_hard_check_exits_one(tmp_path):
    # one octave is too short to assert finite dissipation
    args = ["synth", "single-ball", "--output-dir", str(tmp_path), "--octaves", "1", "--k-max", "1"]
    assert main(args) == EXIT_CHECK_FAILED


def test_overlapping_patches_exit_two(tmp_path, capsys):
    cfg = {
        "version": 1,
        "mode": "synth",
        "patch_config": {"dimension": 2, "patches": [
            {"center": [0.5, 0.0], "radius": 0.1}, {"center": [0.6, 0.0], "radius": 0.1}]},
    }
    assert main(["synth", write_config(tmp_path / "c.json", cfg), "--output-dir", str(tmp_path)]) == EXIT_CONFIG
    assert "patches 0 and 1 overlap" in capsys.readouterr().err


def test_unknown_field_names_its_path(tmp_path, capsys):
    cfg = {"version": 1, "mode": "solve", "solver": {"cells": 32, "boundary": {"kind": "hyperplane"}, "tolerance": 1}}
    assert main(["solve", write_config(tmp_path / "c.json", cfg)]) == EXIT_CONFIG
    assert "field solver" in capsys.readouterr().err


def test_syntax_error_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "version": 1,\n  "mode": "synth"\n  "k_max": 2\n}\n')
    assert main(["synth", str(path)]) == EXIT_CONFIG
    assert "line 4" in capsys.readouterr().err


def test_mode_mismatch(capsys):
    assert main(["solve", "single-ball"]) == EXIT_CONFIG
    assert "expected 'solve'" in capsys.readouterr().err


def test_sampled_without_seed_rejected():
    with pytest.raises(ConfigurationError, match="seed"):
        RunConfig.build({"version": 1, "mode": "solve", "solver": {"cells": 8, "boundary": {"kind": "hyperplane"}},
                         "integration": {"method": "sampled"}})


def test_misaligned_scales_rejected():
    with pytest.raises(ConfigurationError, match="scales"):
        RunConfig.build({"version": 1, "mode": "solve", "solver": {"cells": 8, "boundary": {"kind": "hyperplane"}},
                         "scales": {"t_end": 1.0, "steps": 10}})


def test_precedence_flag_env_file_default():
    data = parse_config_text(json.dumps({
        "version": 1, "mode": "solve", "k_max": 3,
        "solver": {"cells": 8, "boundary": {"kind": "hyperplane"}},
        "output": {"directory": "from-file"},
    }))
    cfg = RunConfig.build(data, {}, {})
    assert cfg.data["k_max"] == 3 and str(cfg.output_dir) == "from-file"
    assert cfg.data["integration"]["samples"] == 20000
    cfg = RunConfig.build(data, {}, {OUTPUT_ENV: "from-env"})
    assert str(cfg.output_dir) == "from-env"
    cfg = RunConfig.build(data, {"output.directory": "from-flag", "k_max": 5}, {OUTPUT_ENV: "from-env"})
    assert str(cfg.output_dir) == "from-flag" and cfg.data["k_max"] == 5


def test_scale_flags_replace_file_scales():
    data = {"version": 1, "mode": "solve", "solver": {"cells": 8, "boundary": {"kind": "hyperplane"}},
            "scales": {"octaves": 4, "steps_per_octave": 8}}
    cfg = RunConfig.build(data, {"scales.t_end": 0.6931471805599453, "scales.steps": 4}, {})
    assert cfg.t_values().size == 5


def test_environment_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["synth", "single-ball"] + SHORT) == EXIT_OK
    assert (tmp_path / "env" / "single-ball.csv").exists()


def test_solver_failure_exits_three(tmp_path, monkeypatch):
    def fail(grid, config):
        raise SolverFailure("conjugate gradients did not converge", [1.0, 0.5])

    monkeypatch.setattr(cli, "fixed_point_solve", fail)
    assert main(["solve", "hyperplane", "--output-dir", str(tmp_path)]) == EXIT_SOLVER


def test_solve_then_analyze_snapshot(tmp_path):
    out = tmp_path / "solve"
    args = ["solve", "hyperplane", "--cells", "64", "--output-dir", str(out), "--octaves", "1", "--k-max", "1"]
    assert main(args) in (EXIT_OK, EXIT_CHECK_FAILED)
    sidecar = json.loads((out / "hyperplane.grid.json").read_text())
    assert sidecar["metrics"]["cells"] == 64
    again = tmp_path / "again"
    code = main(["analyze", str(out / "hyperplane.grid"), "--output-dir", str(again), "--octaves", "1", "--k-max", "1"])
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)
    first = json.loads((out / "hyperplane.json").read_text())["report"]
    second = json.loads((again / "run.json").read_text())["report"]
    assert first["checks"] == second["checks"]


def test_k_max_zero_still_passes(tmp_path):
    args = ["synth", "single-ball", "--output-dir", str(tmp_path), "--octaves", "3", "--k-max", "0"]
    assert main(args) == EXIT_OK
    report = json.loads((tmp_path / "single-ball.json").read_text())["report"]
    assert {row["check"]: row["passed"] for row in report["checks"]}["dyadic"]
