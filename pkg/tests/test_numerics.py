"""Tests for finite differences, quadrature and the Newton solver."""

import math

import numpy as np
import pytest

from forced_vi import newton, numdiff, quadrature
from forced_vi.errors import NewtonNoConvergence, QuadratureNoConvergence, SingularJacobian
from forced_vi.settings import DEFAULT_SETTINGS, SolverSettings

STEP = DEFAULT_SETTINGS.fd_step_scale


def test_derivative():
    """Test the scalar central difference."""
    assert float(numdiff.derivative(np.sin, 0.3, STEP)) == pytest.approx(math.cos(0.3), rel=1e-9)


def test_gradient():
    """Test the gradient of sum(x^3)."""
    grad = numdiff.gradient(lambda x: float(np.sum(x**3)), np.array([1.0, 2.0]), STEP)
    np.testing.assert_allclose(grad, [3.0, 12.0], rtol=1e-8)


def test_jacobian_shape_and_values():
    """Test that the Jacobian has one row per output and one column per input."""
    J = numdiff.jacobian(lambda x: np.array([x[0] * x[1], np.sin(x[0]), x[1]]), np.array([0.5, 2.0]), STEP)
    assert J.shape == (3, 2)
    np.testing.assert_allclose(J, [[2.0, 0.5], [math.cos(0.5), 0.0], [0.0, 1.0]], atol=1e-9)


def test_hessian_is_symmetric_and_accurate():
    """Test the Richardson Hessian of x0^2 x1 + x1^3."""
    H = numdiff.hessian(lambda x: x[0] ** 2 * x[1] + x[1] ** 3, np.array([1.0, 2.0]))
    np.testing.assert_array_equal(H, H.T)
    np.testing.assert_allclose(H, [[4.0, 2.0], [2.0, 12.0]], rtol=1e-7)


def test_gauss_legendre_scalar_and_vector():
    """Test adaptive quadrature of exp and of a vector integrand."""
    value = quadrature.gauss_legendre(lambda t: np.exp(t), 0.0, 1.0, 1e-12)
    assert float(value) == pytest.approx(math.e - 1.0, rel=1e-13)

    vector = quadrature.gauss_legendre(lambda t: np.column_stack([t, t**2]), 0.0, 2.0, 1e-12)
    np.testing.assert_allclose(vector, [2.0, 8.0 / 3.0], rtol=1e-13)


def test_gauss_legendre_empty_and_reversed():
    """Test a == b and b < a."""
    zero = quadrature.gauss_legendre(lambda t: np.column_stack([t, t]), 0.5, 0.5, 1e-12)
    np.testing.assert_array_equal(zero, [0.0, 0.0])
    reversed_value = quadrature.gauss_legendre(lambda t: np.cos(t), 1.0, 0.0, 1e-12)
    assert float(reversed_value) == pytest.approx(-math.sin(1.0), rel=1e-13)


def test_gauss_legendre_depth_limit():
    """Test that an unresolved integrand raises QuadratureNoConvergence."""
    with pytest.raises(QuadratureNoConvergence):
        quadrature.gauss_legendre(lambda t: np.sin(200.0 * t), 0.0, 10.0, 1e-12, max_depth=1)


def test_fixed_rules():
    """Test node placement and weights of the fixed rules."""
    for name in quadrature.FIXED_RULES:
        nodes, weights = quadrature.fixed_rule(name, 3)
        assert weights.sum() == pytest.approx(1.0)
        assert np.all((nodes >= 0.0) & (nodes <= 1.0))
    nodes, _ = quadrature.fixed_rule("gauss", 2)
    np.testing.assert_allclose(nodes, [0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
    with pytest.raises(ValueError, match="Unknown quadrature rule"):
        quadrature.fixed_rule("simpson")


def test_newton_converges():
    """Test x^2 = 2 from x = 1."""
    result = newton.solve(lambda x: x**2 - 2.0, np.array([1.0]), DEFAULT_SETTINGS)
    assert result.x[0] == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert result.residual_norm <= DEFAULT_SETTINGS.newton_tol
    assert result.guess_distance == pytest.approx(math.sqrt(2.0) - 1.0, abs=1e-12)


def test_newton_analytic_jacobian():
    """Test a linear system solved in one iteration."""
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    result = newton.solve(lambda x: A @ x - b, np.zeros(2), DEFAULT_SETTINGS, jacobian=lambda x: A)
    np.testing.assert_allclose(result.x, np.linalg.solve(A, b), atol=1e-14)
    assert result.iterations == 1


def test_newton_singular_jacobian():
    """Test that a zero Jacobian raises SingularJacobian."""
    with pytest.raises(SingularJacobian):
        newton.solve(lambda x: x**2 + 1.0, np.array([0.0]), DEFAULT_SETTINGS, jacobian=lambda x: np.array([[0.0]]))


def test_newton_iteration_cap():
    """Test that exp(x) = 0 exhausts the iteration cap."""
    settings = SolverSettings(newton_max_iter=5)
    with pytest.raises(NewtonNoConvergence) as excinfo:
        newton.solve(lambda x: np.exp(x), np.array([1.0]), settings)
    assert excinfo.value.iterations == 5
    assert excinfo.value.residual_norm > settings.newton_tol


def test_solver_settings_validation():
    """Test that settings reject nonpositive tolerances and unknown fields."""
    with pytest.raises(ValueError):
        SolverSettings(newton_tol=0.0)
    with pytest.raises(ValueError):
        SolverSettings(unknown=1.0)
    assert DEFAULT_SETTINGS.noise_floor == 1e-12
