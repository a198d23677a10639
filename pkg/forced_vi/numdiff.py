"""Central finite differences.

First derivatives use a plain central difference with a relative step
``step_scale * max(1, |x|)``. Second derivatives use second differences at
two step sizes combined by Richardson extrapolation, which makes them fourth
order accurate so that they can stand in for analytic Hessians.
"""

from typing import Callable

import numpy as np

from forced_vi.settings import MACHINE_EPS

# Base step for second differences; the extrapolated estimate uses step and step/2.
HESSIAN_STEP_SCALE = 2.0 * MACHINE_EPS ** (1.0 / 6.0)


def _relative_step(x: np.ndarray, scale: float) -> float:
    return scale * max(1.0, float(np.linalg.norm(np.atleast_1d(x))))


def derivative(f: Callable[[float], np.ndarray], t: float, step_scale: float) -> np.ndarray:
    """Central difference of a function of one scalar argument.

    Args:
        f: Function of a scalar returning a scalar or an array
        t: Point of evaluation
        step_scale: Relative step

    Returns:
        Estimate of df/dt with the shape of f(t)
    """
    h = step_scale * max(1.0, abs(t))
    return (np.asarray(f(t + h), dtype=float) - np.asarray(f(t - h), dtype=float)) / (2.0 * h)


def gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step_scale: float) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = _relative_step(x, step_scale)
    grad = np.empty(x.size)
    probe = x.copy()
    for i in range(x.size):
        probe[i] = x[i] + h
        f_right = float(f(probe))
        probe[i] = x[i] - h
        f_left = float(f(probe))
        probe[i] = x[i]
        grad[i] = (f_right - f_left) / (2.0 * h)
    return grad


def jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step_scale: float) -> np.ndarray:
    """Central-difference Jacobian of a vector function.

    Returns:
        Array of shape (m, n) where m = len(f(x)) and n = len(x)
    """
    x = np.asarray(x, dtype=float)
    h = _relative_step(x, step_scale)
    columns = []
    probe = x.copy()
    for i in range(x.size):
        probe[i] = x[i] + h
        f_right = np.atleast_1d(np.asarray(f(probe), dtype=float))
        probe[i] = x[i] - h
        f_left = np.atleast_1d(np.asarray(f(probe), dtype=float))
        probe[i] = x[i]
        columns.append((f_right - f_left) / (2.0 * h))
    return np.column_stack(columns)


def _second_difference(f, x, i, h, f0):
    probe = x.copy()
    probe[i] = x[i] + h
    f_right = float(f(probe))
    probe[i] = x[i] - h
    f_left = float(f(probe))
    return (f_right - 2.0 * f0 + f_left) / (h * h)


def _mixed_difference(f, x, i, j, h):
    probe = x.copy()
    total = 0.0
    for si, sj, sign in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
        probe[i] = x[i] + si * h
        probe[j] = x[j] + sj * h
        total += sign * float(f(probe))
    return total / (4.0 * h * h)


def hessian(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Richardson-extrapolated Hessian of a scalar function.

    Returns:
        Exactly symmetric (n, n) array
    """
    x = np.asarray(x, dtype=float)
    h = _relative_step(x, HESSIAN_STEP_SCALE)
    f0 = float(f(x))
    n = x.size
    hess = np.empty((n, n))
    for i in range(n):
        coarse = _second_difference(f, x, i, h, f0)
        fine = _second_difference(f, x, i, 0.5 * h, f0)
        hess[i, i] = (4.0 * fine - coarse) / 3.0
        for j in range(i + 1, n):
            coarse = _mixed_difference(f, x, i, j, h)
            fine = _mixed_difference(f, x, i, j, 0.5 * h)
            hess[i, j] = hess[j, i] = (4.0 * fine - coarse) / 3.0
    return hess
