from __future__ import annotations

import csv
import json
import logging

import pytest

from design_cli.app import EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, main
from multibody.model import parse_model

from conftest import MODELS_DIR, free_beam_data, oscillator_data, welded_frame_data


@pytest.fixture(autouse=True)
def _detach_log_handlers():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_design_cli", False):
            root.removeHandler(handler)
            handler.close()
    root.setLevel(logging.WARNING)


def _write_model(tmp_path, data, name="model.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _shipped(name, **simulation):
    data = json.loads((MODELS_DIR / f"{name}.json").read_text(encoding="utf-8"))
    data["simulation"].update(simulation)
    return data


def _row_count(path):
    with path.open(newline="", encoding="utf-8") as handle:
        return sum(1 for _ in csv.reader(handle)) - 1


def test_simulate_writes_trajectory_and_summary(isolated_env):
    out = isolated_env / "out"
    status = main(["simulate", "--model", str(MODELS_DIR / "pendulum.json"), "--out", str(out), "--T", "0.02"])
    assert status == EXIT_OK
    assert _row_count(out / "trajectory.csv") == 21
    summary = json.loads((out / "simulation.json").read_text(encoding="utf-8"))
    assert summary["N"] == 20
    assert summary["dof_count"] == 36
    assert summary["final_constraint_residual"] <= 1e-8
    assert list((isolated_env / "logs").glob("simulate-*.log"))


def test_missing_model_file(isolated_env, capsys):
    status = main(["simulate", "--model", str(isolated_env / "nope.json")])
    assert status == EXIT_INPUT
    assert "not found" in capsys.readouterr().err


def test_malformed_model_reports_location(isolated_env, capsys):
    path = isolated_env / "broken.json"
    path.write_text('{"version": 1,\n "nodes": {', encoding="utf-8")
    assert main(["validate", "--model", str(path)]) == EXIT_INPUT
    assert "line" in capsys.readouterr().err


def test_sensitivity_without_design_variables(isolated_env):
    path = _write_model(isolated_env, oscillator_data(T=0.05))
    assert main(["sensitivity", "--model", str(path)]) == EXIT_CONFIG


def test_bad_overrides_and_environment(isolated_env, monkeypatch):
    model = str(MODELS_DIR / "pendulum.json")
    assert main(["simulate", "--model", model, "--h", "-0.1"]) == EXIT_CONFIG
    assert main(["simulate", "--model", model, "--T", "0.0001"]) == EXIT_INPUT
    monkeypatch.setenv("MBS_FD_WORKERS", "zero")
    assert main(["simulate", "--model", model]) == EXIT_CONFIG


def test_argument_errors_exit_with_config_status(isolated_env):
    with pytest.raises(SystemExit) as info:
        main(["explode", "--model", "x.json"])
    assert info.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == EXIT_CONFIG


def test_newton_failure_exits_numerical(isolated_env):
    path = _write_model(isolated_env, _shipped("rigid_spring_beam", T=0.005, newton_tol=1e-30, max_newton_iters=2))
    assert main(["simulate", "--model", str(path)]) == EXIT_NUMERICAL


def test_collapsed_spring_exits_numerical(isolated_env, capsys):
    # the first Newton guess puts the mass on the spring's ground end at the interval midpoint
    data = oscillator_data(T=0.25, h=0.0625)
    data["bodies"][0]["initial_velocity"]["linear"] = [-32.0, 0.0, 0.0]
    path = _write_model(isolated_env, data)
    assert main(["simulate", "--model", str(path)]) == EXIT_NUMERICAL
    assert "step 0: spring length is zero" in capsys.readouterr().err


def test_validate_pass_and_fail(isolated_env, capsys):
    out = isolated_env / "out"
    assert main(["validate", "--model", str(MODELS_DIR / "pendulum.json"), "--out", str(out)]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert json.loads((out / "validation.json").read_text(encoding="utf-8"))["pass"] is True

    data = _shipped("pendulum")
    data["bodies"][0]["initial_velocity"] = {"linear": [0.0, 1.0, 0.0]}
    path = _write_model(isolated_env, data, "moving.json")
    assert main(["validate", "--model", str(path), "--out", str(out)]) == EXIT_INPUT
    assert "FAIL" in capsys.readouterr().out


def test_sensitivity_all_methods_agree(isolated_env):
    out = isolated_env / "out"
    path = _write_model(isolated_env, free_beam_data(T=0.02))
    assert main(["sensitivity", "--model", str(path), "--out", str(out), "--method", "all"]) == EXIT_OK
    agreement = json.loads((out / "agreement.json").read_text(encoding="utf-8"))
    assert agreement["variable_ids"] == ["X_B", "E"]
    assert agreement["max_relative_error"]["adjoint_vs_direct"] <= 1e-8
    assert agreement["max_relative_error"]["adjoint_vs_fd"] <= 1e-4
    for method in ("adjoint", "direct", "fd"):
        assert _row_count(out / f"sensitivity_{method}.csv") == 2
    assert not list(out.glob("*_term*.csv"))


def test_sensitivity_splits_terms(isolated_env):
    out = isolated_env / "out"
    path = _write_model(isolated_env, welded_frame_data(T=0.01))
    assert main(["sensitivity", "--model", str(path), "--out", str(out)]) == EXIT_OK
    assert _row_count(out / "sensitivity_adjoint.csv") == 6
    assert sorted(p.name for p in out.glob("sensitivity_adjoint_term*.csv")) == [
        "sensitivity_adjoint_term0.csv",
        "sensitivity_adjoint_term1.csv",
        "sensitivity_adjoint_term2.csv",
    ]


def test_optimize_writes_history_and_model(isolated_env):
    out = isolated_env / "out"
    data = _shipped("rigid_spring_beam", T=0.02)
    data["optimization"]["max_iters"] = 1
    path = _write_model(isolated_env, data)
    assert main(["optimize", "--model", str(path), "--out", str(out)]) == EXIT_OK
    assert _row_count(out / "history.csv") == 2
    summary = json.loads((out / "optimization.json").read_text(encoding="utf-8"))
    assert summary["status"] in ("max_iters", "converged")
    assert set(summary["design"]) == {"X_D", "Y_D"}
    optimized = parse_model((out / "optimized_model.json").read_text(encoding="utf-8"))
    nodes = optimized.node_map()
    assert nodes["D"][0] == pytest.approx(summary["design"]["X_D"])
    assert nodes["D"][1] == pytest.approx(summary["design"]["Y_D"])


def test_optimize_without_section(isolated_env):
    path = _write_model(isolated_env, free_beam_data(T=0.02))
    assert main(["optimize", "--model", str(path)]) == EXIT_CONFIG
