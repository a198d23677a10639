"""Tests for one-step maps and trajectories."""

import math
from dataclasses import replace

import numpy as np
import pytest

from forced_vi.continuous_flow import FlowOracle, flow
from forced_vi import numdiff
from forced_vi.disc_qq import (
    discrete_legendre_minus,
    discrete_legendre_plus,
    exact_discrete_data_qq,
    midpoint_data_qq,
    trapezoid_data_qq,
)
from forced_vi.disc_tq import (
    DiscretizationTQ,
    alpha_pair,
    exact_discrete_data_tq,
    make_exact_discretization,
    make_linear_discretization,
    quadrature_discrete_data,
    truncated_exact_friction,
)
from forced_vi.errors import DegenerateVariationSpace, DomainError, TrajectoryAborted
from forced_vi.fms_core import StateTQ
from forced_vi.order_lab import estimate_order
from forced_vi.settings import SolverSettings
from forced_vi.stepper import (
    del_residual,
    initialize_from_state,
    run_trajectory,
    run_trajectory_tq,
    solve_step_qq,
    step_qq,
    step_tq,
    trajectory_residuals,
    variation_basis,
)
from forced_vi.systems import damped_duffing, damped_particle, forced_pendulum, free_particle

MIDPOINT_Q2 = 0.1 + 0.1 * 0.95 / 1.05


@pytest.fixture
def midpoint_damped():
    return midpoint_data_qq(damped_particle(1.0))


def test_del_residual_midpoint(midpoint_damped):
    """Test the residual at the solution and its slope -(1/h + alpha/2)."""
    residual = del_residual(midpoint_damped, 0.1, [0.0], [0.1], [MIDPOINT_Q2])
    np.testing.assert_allclose(residual, [0.0], atol=1e-12)
    perturbed = del_residual(midpoint_damped, 0.1, [0.0], [0.1], [MIDPOINT_Q2 + 1e-3])
    np.testing.assert_allclose(perturbed, [-0.0105], atol=1e-12)


def test_step_qq_midpoint(midpoint_damped):
    """Test q2 = 0.19047619047..."""
    q2 = step_qq(midpoint_damped, 0.1, [0.0], [0.1])
    assert q2[0] == pytest.approx(0.19047619047619047, abs=1e-12)


def test_step_qq_free_particle():
    """Test that the free particle continues on a straight line."""
    result, retried = solve_step_qq(midpoint_data_qq(free_particle()), 0.2, [0.3], [0.5])
    np.testing.assert_allclose(result.x, [0.7], atol=1e-14)
    assert result.iterations <= 1
    assert not retried


def test_step_qq_exact_data():
    """Test that exact data reproduces the damped flow: q2 = 1 - exp(-0.2)."""
    data = exact_discrete_data_qq(FlowOracle.for_system(damped_particle(1.0)))
    q2 = step_qq(data, 0.1, [0.0], [-math.expm1(-0.1)])
    assert q2[0] == pytest.approx(-math.expm1(-0.2), abs=1e-8)


def test_step_qq_rejects_zero_step(midpoint_damped):
    """Test DomainError at h = 0."""
    with pytest.raises(DomainError):
        step_qq(midpoint_damped, 0.0, [0.0], [0.1])


def test_step_tq_exact_matches_flow():
    """Test that the exact discrete flow on TQ is the continuous flow."""
    oracle = FlowOracle.for_system(damped_particle(1.0))
    s = StateTQ([0.2], [1.0])
    for plus, minus in (alpha_pair("one_sided"), alpha_pair("symmetric")):
        data = exact_discrete_data_tq(oracle, plus, minus)
        d = make_exact_discretization(oracle, plus, minus)
        np.testing.assert_allclose(step_tq(data, d, 0.3, s).vector(), flow(oracle, 0.3, s).vector(), atol=1e-8)


def test_step_tq_free_particle_linear():
    """Test (q, v) -> (q + h v, v) for the free particle with linear midpoint data."""
    sys = free_particle()
    d = make_linear_discretization(1)
    s_next = step_tq(quadrature_discrete_data(sys, d, "midpoint"), d, 0.25, StateTQ([1.0], [2.0]))
    np.testing.assert_allclose(s_next.vector(), [1.5, 2.0], atol=1e-12)


def test_step_tq_truncated_first_order():
    """Test the r = 1 map (q, v) -> (q + h v, v / (1 + alpha h))."""
    d, data = truncated_exact_friction(2.0, 1)
    s_next = step_tq(data, d, 0.1, StateTQ([0.0], [1.2]))
    np.testing.assert_allclose(s_next.vector(), [0.12, 1.2 / 1.2], atol=1e-12)


def test_variation_basis_linear():
    """Test that the basis satisfies the constraints and is normalized at the shared point."""
    d = make_linear_discretization(2)
    s = StateTQ([0.0, 1.0], [1.0, -1.0])
    s_next = StateTQ([0.3, 0.7], [0.5, 0.2])
    B = variation_basis(d, 0.3, s, s_next)
    assert B.shape == (8, 2)
    np.testing.assert_allclose(B[:2], 0.0, atol=1e-14)
    np.testing.assert_allclose(B[:2] + 0.3 * B[2:4], np.eye(2), atol=1e-12)
    np.testing.assert_allclose(B[4:6], np.eye(2), atol=1e-12)
    np.testing.assert_allclose(B[4:6] + 0.3 * B[6:], 0.0, atol=1e-12)


def test_variation_basis_degenerate():
    """Test that curves ignoring the velocity leave too many variations."""
    plus, minus = alpha_pair("one_sided")
    frozen = DiscretizationTQ(plus, minus, lambda h, t, s: s.q.copy())
    s = StateTQ([0.0], [1.0])
    with pytest.raises(DegenerateVariationSpace) as info:
        variation_basis(frozen, 0.1, s, s)
    assert info.value.dimension == 2


def test_initialize_from_state():
    """Test q1 for the exact data and for the free particle."""
    sys = damped_particle(1.0)
    exact = exact_discrete_data_qq(FlowOracle.for_system(sys))
    q1 = initialize_from_state(exact, sys, 0.2, [0.5], [1.0])
    assert q1[0] == pytest.approx(0.5 - math.expm1(-0.2), abs=1e-8)

    free = free_particle()
    np.testing.assert_allclose(initialize_from_state(midpoint_data_qq(free), free, 0.2, [0.5], [1.0]), [0.7], atol=1e-12)
    np.testing.assert_allclose(initialize_from_state(midpoint_data_qq(free), free, 0.2, [0.5], [0.0]), [0.5], atol=1e-14)


def test_run_trajectory(midpoint_damped):
    """Test trajectory length, the first step and the residual diagnostics."""
    trajectory = run_trajectory(midpoint_damped, 0.1, [0.0], [0.1], 2)
    assert trajectory.N == 2
    assert trajectory.positions[2][0] == pytest.approx(MIDPOINT_Q2, abs=1e-12)

    long_run = run_trajectory(midpoint_damped, 0.05, [0.0], [0.05], 20)
    assert long_run.positions_array().shape == (21, 1)
    assert len(long_run.residual_norms) == 19
    assert max(long_run.residual_norms) <= 1e-12
    assert max(trajectory_residuals(midpoint_damped, long_run)) <= 1e-11

    with pytest.raises(ValueError, match="at least 2"):
        run_trajectory(midpoint_damped, 0.1, [0.0], [0.1], 1)


def test_run_trajectory_aborts_with_partial_path():
    """Test that a failing step reports the positions computed so far."""
    data = midpoint_data_qq(damped_duffing(1.0, 5.0, 0.1))
    settings = SolverSettings(newton_max_iter=1)
    with pytest.raises(TrajectoryAborted) as info:
        run_trajectory(data, 0.5, [1.0], [1.2], 5, settings)
    assert info.value.trajectory.N == 1
    assert info.value.cause is not None


def test_free_particle_conserves_discrete_momentum():
    """Test that unforced free motion keeps both discrete momenta equal and constant."""
    data = midpoint_data_qq(free_particle(2))
    trajectory = run_trajectory(data, 0.1, [0.0, 1.0], [0.1, 0.8], 10)
    q = trajectory.positions
    for k in range(1, 10):
        np.testing.assert_allclose(discrete_legendre_plus(data, 0.1, q[k - 1], q[k]), [1.0, -2.0], atol=1e-10)
        np.testing.assert_allclose(discrete_legendre_minus(data, 0.1, q[k], q[k + 1]), [1.0, -2.0], atol=1e-10)


def test_run_trajectory_tq_truncated_first_order():
    """Test v_k = v / (1 + alpha h)^k for the r = 1 map."""
    d, data = truncated_exact_friction(1.0, 1)
    trajectory = run_trajectory_tq(data, d, 0.1, StateTQ([0.0], [1.0]), 3)
    assert trajectory.N == 3
    for k, v in enumerate(trajectory.velocities):
        assert v[0] == pytest.approx(1.1**-k, abs=1e-12)


def test_step_tq_tends_to_identity():
    """Test that the discrete flow approaches the identity to first order as h -> 0."""
    d, data = truncated_exact_friction(1.0, 2)
    s = StateTQ([0.3], [1.0])
    h_values = [10.0**-k for k in range(2, 7)]
    errors = [float(np.max(np.abs(step_tq(data, d, h, s).vector() - s.vector()))) for h in h_values]
    assert estimate_order(h_values, errors).slope >= 0.9


@pytest.mark.parametrize("rule", [midpoint_data_qq, trapezoid_data_qq], ids=["midpoint", "trapezoid"])
@pytest.mark.parametrize(
    "sys",
    [forced_pendulum(mass=1.0, length=1.0, gravity=9.81, damping=0.3, torque=0.5), damped_duffing(1.0, 5.0, 0.2)],
    ids=["pendulum", "duffing"],
)
def test_step_jacobian_matches_residual_differences(rule, sys):
    """Test the closed-form DEL Jacobian in q2 and the step it drives."""
    data = rule(sys)
    h, q0, q1, q2 = 0.1, np.array([0.2]), np.array([0.3]), np.array([0.38])
    numeric = numdiff.jacobian(lambda x: del_residual(data, h, q0, q1, x), q2, SolverSettings().fd_step_scale)
    np.testing.assert_allclose(data.step_jacobian(h, q1, q2), numeric, rtol=1e-6, atol=1e-6)
    by_differences = step_qq(replace(data, step_jacobian=None), h, q0, q1)
    np.testing.assert_allclose(step_qq(data, h, q0, q1), by_differences, atol=1e-11)


def test_step_jacobian_free_particle_plane():
    """Test -I/h for the free particle in two dimensions."""
    data = midpoint_data_qq(free_particle(2))
    np.testing.assert_allclose(data.step_jacobian(0.5, [0.0, 1.0], [0.3, 0.7]), -2.0 * np.eye(2))
