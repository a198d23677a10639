"""Tests for experiment configuration."""

import json

import pytest

from forced_vi.config import (
    THREADS_ENV,
    ExperimentConfig,
    example_config,
    load_config,
    parse_config,
    save_config,
    threads_from_env,
)
from forced_vi.errors import SchemaError


def minimal(**experiment):
    experiment.setdefault("kind", "order")
    return {"system": {"name": "damped_particle", "params": {"alpha": 1.0}}, "experiment": experiment}


def paths(error: SchemaError) -> list[str]:
    return [v.path for v in error.violations]


def test_parse_minimal_config():
    """Test defaults filled in around a minimal document."""
    cfg = parse_config(json.dumps(minimal()))
    assert cfg.system.params == {"alpha": 1.0}
    assert cfg.discretization.kind == "exact"
    assert cfg.experiment.formulation == "tq"
    assert cfg.experiment.initial_state.q == [0.0]
    assert cfg.solver.newton_tol == 1e-12


def test_missing_parameter_is_reported_by_path():
    """Test that a missing alpha names system.params.alpha."""
    doc = minimal()
    doc["system"]["params"] = {}
    with pytest.raises(SchemaError) as info:
        parse_config(json.dumps(doc))
    assert paths(info.value) == ["system.params.alpha"]


def test_unknown_parameter_is_rejected():
    """Test parameters outside the system's list."""
    doc = minimal()
    doc["system"]["params"]["beta"] = 2.0
    with pytest.raises(SchemaError) as info:
        parse_config(json.dumps(doc))
    assert "system.params.beta" in paths(info.value)


@pytest.mark.parametrize("kind", ["custom-quadrature", "quadrature"])
def test_custom_quadrature_kind(kind):
    """Test the custom-quadrature kind and its short alias."""
    doc = minimal()
    doc["discretization"] = {"kind": kind, "rule": "gauss", "gauss_nodes": 3}
    assert parse_config(json.dumps(doc)).discretization.kind == "custom-quadrature"


def test_global_fit_of_exact_data_needs_expected_order():
    """Test that exact data has no declared order to fit a global slope against."""
    with pytest.raises(SchemaError) as info:
        parse_config(json.dumps(minimal(global_error=True)))
    assert paths(info.value) == ["experiment.expected_order"]
    cfg = parse_config(json.dumps(minimal(global_error=True, expected_order=2)))
    assert cfg.experiment.expected_order == 2


def test_scalar_grid_is_rejected():
    """Test that h_grid must be a list."""
    with pytest.raises(SchemaError) as info:
        parse_config(json.dumps(minimal(h_grid=0.1)))
    assert "experiment.h_grid" in paths(info.value)


def test_unknown_field_is_rejected():
    """Test extra keys."""
    doc = minimal()
    doc["discretization"] = {"kind": "linear", "nodes": 3}
    with pytest.raises(SchemaError) as info:
        parse_config(json.dumps(doc))
    assert "discretization.nodes" in paths(info.value)


def test_simulate_needs_step():
    """Test the h requirement of step-based experiments."""
    with pytest.raises(SchemaError) as info:
        parse_config(json.dumps(minimal(kind="simulate")))
    assert paths(info.value) == ["experiment"]


def test_truncated_exact_needs_damped_particle():
    """Test the system restriction of the truncated-exact family."""
    doc = {
        "system": {"name": "forced_oscillator", "params": {"mass": 1.0, "stiffness": 1.0, "damping": 0.1}},
        "discretization": {"kind": "truncated_exact", "order_r": 2},
        "experiment": {"kind": "order"},
    }
    with pytest.raises(SchemaError) as info:
        parse_config(json.dumps(doc))
    assert paths(info.value) == ["discretization.kind"]


def test_initial_state_dimension():
    """Test that built-in systems are one-dimensional."""
    with pytest.raises(SchemaError) as info:
        parse_config(json.dumps(minimal(initial_state={"q": [0.0, 1.0], "v": [1.0, 0.0]})))
    assert paths(info.value) == ["experiment.initial_state.q"]


def test_invalid_json():
    """Test that unparsable text is a schema error at the root."""
    with pytest.raises(SchemaError, match="invalid JSON"):
        parse_config("{not json")


def test_save_and_load(tmp_path):
    """Test a configuration survives a save and load."""
    path = tmp_path / "experiment.json"
    save_config(example_config(), path)
    assert path.exists()
    loaded = load_config(path)
    assert isinstance(loaded, ExperimentConfig)
    assert loaded == example_config()


def test_load_missing_file(tmp_path):
    """Test that an unreadable file is a schema error."""
    with pytest.raises(SchemaError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_threads_from_env():
    """Test the worker-pool variable."""
    assert threads_from_env({}) == 1
    assert threads_from_env({THREADS_ENV: "4"}) == 4
    with pytest.raises(SchemaError):
        threads_from_env({THREADS_ENV: "zero"})
    with pytest.raises(SchemaError):
        threads_from_env({THREADS_ENV: "0"})
