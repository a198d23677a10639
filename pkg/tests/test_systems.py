"""Tests for the built-in systems registry."""

import numpy as np
import pytest

from forced_vi.fms_core import StateTQ, el_acceleration, eval_force, eval_lagrangian
from forced_vi.systems import REQUIRED_PARAMS, build_system, damped_duffing, forced_pendulum


def test_build_system_all_builtins():
    """Test that every registered name builds with its required parameters."""
    for name, keys in REQUIRED_PARAMS.items():
        sys = build_system(name, {key: 1.0 for key in keys})
        assert sys.name == name
        assert sys.n == 1
        assert set(sys.params) == set(keys)


def test_build_system_unknown_name():
    """Test that an unknown system name is rejected."""
    with pytest.raises(ValueError, match="Unknown system"):
        build_system("double_pendulum", {})


def test_build_system_incomplete_params():
    """Test that missing and unexpected parameters are both reported."""
    with pytest.raises(ValueError, match=r"missing \['alpha'\]"):
        build_system("damped_particle", {})
    with pytest.raises(ValueError, match=r"unknown \['beta'\]"):
        build_system("damped_particle", {"alpha": 1.0, "beta": 2.0})


def test_damped_particle_requires_positive_alpha():
    """Test parameter validation of the damped particle."""
    with pytest.raises(ValueError, match="positive"):
        build_system("damped_particle", {"alpha": 0.0})


def test_forced_pendulum():
    """Test L = m l^2 v^2/2 + m g l cos q and the constant torque."""
    sys = forced_pendulum(mass=1.0, length=2.0, gravity=10.0, damping=0.5, torque=0.25)
    s = StateTQ([0.0], [1.0])
    assert eval_lagrangian(sys, s) == pytest.approx(2.0 + 20.0)
    np.testing.assert_allclose(eval_force(sys, s), [-0.5 + 0.25])
    # m l^2 a = -m g l sin q - c v + torque
    np.testing.assert_allclose(el_acceleration(sys, StateTQ([np.pi / 2], [0.0])), [(-20.0 + 0.25) / 4.0])


def test_damped_duffing():
    """Test the Duffing acceleration a = -a q - b q^3 - delta v."""
    sys = damped_duffing(linear=-1.0, cubic=1.0, damping=0.2)
    np.testing.assert_allclose(el_acceleration(sys, StateTQ([2.0], [1.0])), [2.0 - 8.0 - 0.2])
