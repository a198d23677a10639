"""Tests for the continuous flow oracle."""

import math

import numpy as np
import pytest

from forced_vi.continuous_flow import FlowOracle, flow, flow_jacobian, flow_many, sample_trajectory, tangent_flow
from forced_vi.fms_core import StateTQ
from forced_vi.systems import damped_particle, forced_oscillator

E1 = math.exp(-1.0)


def test_analytic_flow_damped_particle():
    """Test the closed-form flow at t = 1."""
    oracle = FlowOracle.for_system(damped_particle(1.0))
    assert oracle.mode == "analytic"
    s = flow(oracle, 1.0, StateTQ([0.0], [1.0]))
    assert s.q[0] == pytest.approx(1.0 - E1, abs=1e-15)
    assert s.v[0] == pytest.approx(E1, abs=1e-15)


def test_flow_at_time_zero():
    """Test that F_0 is the identity in both modes."""
    s = StateTQ([0.3], [-0.4])
    for mode in ("analytic", "numeric"):
        out = flow(FlowOracle(damped_particle(1.0), mode), 0.0, s)
        np.testing.assert_array_equal(out.vector(), s.vector())


def test_analytic_mode_requires_closed_form():
    """Test that analytic mode is refused for systems without a closed form."""
    with pytest.raises(ValueError, match="no closed-form flow"):
        FlowOracle(forced_oscillator(1.0, 1.0, 0.1), "analytic")
    with pytest.raises(ValueError, match="Unknown flow mode"):
        FlowOracle(damped_particle(1.0), "euler")


def test_numeric_flow_matches_closed_form():
    """Test the RK4 oracle against the closed form of the damped particle."""
    rng = np.random.default_rng(4)
    for alpha in (0.5, 1.0, 2.0):
        sys = damped_particle(alpha)
        analytic, numeric = FlowOracle(sys, "analytic"), FlowOracle(sys, "numeric")
        for t in (0.5, 2.0):
            s = StateTQ(rng.uniform(-1, 1, 1), rng.uniform(-1, 1, 1))
            gap = flow(numeric, t, s).vector() - flow(analytic, t, s).vector()
            assert np.max(np.abs(gap)) <= 1e-10


def test_semigroup_property():
    """Test F_(t+t') = F_t o F_t' for the numeric oracle."""
    oracle = FlowOracle.for_system(forced_oscillator(1.0, 4.0, 0.2))
    s = StateTQ([1.0], [0.0])
    direct = flow(oracle, 0.7, s)
    composed = flow(oracle, 0.4, flow(oracle, 0.3, s))
    assert np.max(np.abs(direct.vector() - composed.vector())) <= 10 * oracle.settings.ode_tol


def test_tangent_flow_closed_form():
    """Test T F_1 of the damped particle on unit tangent vectors."""
    oracle = FlowOracle.for_system(damped_particle(1.0))
    s = StateTQ([0.0], [1.0])
    dq = tangent_flow(oracle, 1.0, s, ([1.0], [0.0]))
    np.testing.assert_allclose([dq.dq[0], dq.dv[0]], [1.0, 0.0])
    dv = tangent_flow(oracle, 1.0, s, ([0.0], [1.0]))
    np.testing.assert_allclose([dv.dq[0], dv.dv[0]], [1.0 - E1, E1])
    same = tangent_flow(oracle, 0.0, s, ([0.2], [0.3]))
    np.testing.assert_allclose([same.dq[0], same.dv[0]], [0.2, 0.3])


def test_numeric_tangent_matches_finite_differences():
    """Test the variational equations against differences of the flow."""
    oracle = FlowOracle.for_system(forced_oscillator(1.0, 2.0, 0.3))
    s = StateTQ([0.5], [-0.2])
    _, Phi = flow_jacobian(oracle, 0.8, s)
    step = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        column = (flow(oracle, 0.8, StateTQ.from_vector(s.vector() + e)).vector()
                  - flow(oracle, 0.8, StateTQ.from_vector(s.vector() - e)).vector()) / (2 * step)
        np.testing.assert_allclose(Phi[:, j], column, rtol=1e-6, atol=1e-7)


def test_flow_many_matches_single_evaluations():
    """Test batched flows at unsorted times of both signs."""
    oracle = FlowOracle.for_system(forced_oscillator(1.0, 1.0, 0.1))
    s = StateTQ([0.2], [0.7])
    times = [0.3, -0.1, 0.05, 0.0]
    for t, (state, Phi) in zip(times, flow_many(oracle, times, s)):
        single, Phi_single = flow_jacobian(oracle, t, s)
        np.testing.assert_allclose(state.vector(), single.vector(), atol=1e-11)
        np.testing.assert_allclose(Phi, Phi_single, atol=1e-10)


def test_sample_trajectory():
    """Test sampling at t = 0, h, ..., N h."""
    oracle = FlowOracle.for_system(damped_particle(1.0))
    s0 = StateTQ([0.0], [1.0])
    samples = sample_trajectory(oracle, s0, 0.5, 2)
    assert len(samples) == 3
    assert samples[-1].q[0] == pytest.approx(1.0 - E1, abs=1e-14)
    np.testing.assert_allclose(sample_trajectory(oracle, s0, 0.5, 1)[1].vector(), flow(oracle, 0.5, s0).vector())
    with pytest.raises(ValueError):
        sample_trajectory(oracle, s0, 0.5, 0)
    with pytest.raises(ValueError):
        sample_trajectory(oracle, s0, -0.5, 2)
