"""Tests for the forcedvi command line."""

import json

import pytest
from typer.testing import CliRunner

from forced_vi import __version__
from forced_vi.cli import app

runner = CliRunner()


def write_config(path, discretization, experiment, params=None):
    doc = {
        "system": {"name": "damped_particle", "params": {"alpha": 1.0} if params is None else params},
        "discretization": discretization,
        "experiment": experiment,
    }
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def order_config(tmp_path):
    return write_config(tmp_path / "order.json", {"kind": "truncated_exact", "order_r": 2}, {"kind": "order"})


def test_version():
    """Test --version."""
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.stdout


def test_config_example_round_trip(tmp_path):
    """Test that the example configuration validates."""
    path = tmp_path / "example.json"
    assert runner.invoke(app, ["config", "example", "--output", str(path)]).exit_code == 0
    assert path.exists()
    assert runner.invoke(app, ["config", "validate", str(path)]).exit_code == 0


def test_config_validate_rejects_missing_parameter(tmp_path):
    """Test exit code 1 for an invalid configuration."""
    path = write_config(tmp_path / "bad.json", {"kind": "exact"}, {"kind": "order"}, params={})
    assert runner.invoke(app, ["config", "validate", str(path)]).exit_code == 1


def test_order_writes_artifacts(tmp_path, order_config):
    """Test the order experiment on the r = 2 truncated-exact rule."""
    out = tmp_path / "results"
    result = runner.invoke(app, ["order", "--config", str(order_config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = (out / "order.csv").read_text().splitlines()
    assert lines[0] == "h,error,used"
    assert len(lines) == 8
    report = json.loads((out / "order.json").read_text())
    assert report["verdict"] == "pass"
    assert 2.75 <= report["slope"] <= 3.75
    metadata = json.loads((out / "metadata.json").read_text())
    assert metadata["command"] == "order"
    assert metadata["exit_code"] == 0


def test_order_artifacts_are_reproducible(tmp_path, order_config):
    """Test byte-identical data artifacts across runs."""
    for name in ("first", "second"):
        result = runner.invoke(app, ["order", "-c", str(order_config), "-o", str(tmp_path / name)])
        assert result.exit_code == 0
    for artifact in ("order.csv", "order.json"):
        assert (tmp_path / "first" / artifact).read_bytes() == (tmp_path / "second" / artifact).read_bytes()


def test_order_verdict_failure_exit_code(tmp_path):
    """Test exit code 2 when an order-1 rule is held to order 2."""
    path = write_config(
        tmp_path / "fail.json", {"kind": "truncated_exact", "order_r": 1}, {"kind": "order", "expected_order": 2}
    )
    result = runner.invoke(app, ["order", "-c", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert json.loads((tmp_path / "out" / "order.json").read_text())["verdict"] == "fail"


def test_order_with_missing_config(tmp_path):
    """Test exit code 1 for an unreadable configuration."""
    result = runner.invoke(app, ["order", "-c", str(tmp_path / "missing.json"), "-o", str(tmp_path / "out")])
    assert result.exit_code == 1


def test_order_on_exact_data(tmp_path):
    """Test that exact data without an expected order is reported exact."""
    path = write_config(tmp_path / "exact.json", {"kind": "exact"}, {"kind": "order", "h_grid": [0.2, 0.1, 0.05]})
    assert runner.invoke(app, ["config", "validate", str(path)]).exit_code == 0
    result = runner.invoke(app, ["order", "--config", str(path), "--out", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "order.json").read_text())
    assert report["verdict"] == "exact"
    assert report["expected_slope"] is None


def test_global_order_on_exact_data_needs_expected_order(tmp_path):
    """Test that validation rejects a global fit of exact data with nothing to compare against."""
    path = write_config(
        tmp_path / "exact.json", {"kind": "exact"}, {"kind": "order", "h_grid": [0.2, 0.1, 0.05], "global_error": True}
    )
    result = runner.invoke(app, ["config", "validate", str(path)])
    assert result.exit_code == 1
    assert "experiment.expected_order" in result.output
    result = runner.invoke(app, ["order", "--config", str(path), "--out", str(tmp_path / "out")])
    assert result.exit_code == 1


def test_simulate_tq(tmp_path):
    """Test trajectory.csv of a TQ run."""
    path = write_config(
        tmp_path / "sim.json",
        {"kind": "truncated_exact", "order_r": 1},
        {"kind": "simulate", "h": 0.1, "N": 5},
    )
    result = runner.invoke(app, ["simulate", "-c", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "k,t,q0,v0,residual"
    assert len(lines) == 7
    assert lines[1].split(",")[:4] == ["0", "0", "0", "1"]


def test_simulate_qq(tmp_path):
    """Test a Q x Q run with midpoint data."""
    path = write_config(
        tmp_path / "sim.json",
        {"kind": "linear", "rule": "midpoint"},
        {"kind": "simulate", "formulation": "qq", "h": 0.1, "N": 4},
    )
    result = runner.invoke(app, ["simulate", "-c", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["N"] == 4
    assert report["max_residual"] <= 1e-10


def test_exactness_command(tmp_path):
    """Test the exactness experiment with exact data."""
    path = write_config(tmp_path / "exact.json", {"kind": "exact"}, {"kind": "exactness", "h": 0.25, "N": 6})
    result = runner.invoke(app, ["exactness", "-c", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / "out" / "exactness.json").read_text())["ok"] is True


def test_command_overrides_experiment_kind(tmp_path, order_config):
    """Test that the command name selects the experiment."""
    result = runner.invoke(app, ["correspond", "-c", str(order_config), "-o", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "correspondence.json").read_text())
    assert report["max_discrepancy"] <= 1e-8


def test_selftest(tmp_path):
    """Test the built-in property battery."""
    result = runner.invoke(app, ["selftest", "--seed", "3", "-o", str(tmp_path)])
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "selftest.json").read_text())
    assert summary["ok"] is True
    assert {check["name"] for check in summary["checks"]} >= {"exactness", "exactness_negative_control"}
