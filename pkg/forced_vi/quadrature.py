"""Gauss–Legendre quadrature: adaptive composite integration and fixed rules."""

from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from forced_vi.errors import QuadratureNoConvergence

FIXED_RULES = ("rectangle", "trapezoid", "midpoint", "gauss")


@lru_cache(maxsize=None)
def _legendre_rule(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _panel(f, a: float, b: float, nodes: int) -> np.ndarray:
    x, w = _legendre_rule(nodes)
    half = 0.5 * (b - a)
    ts = 0.5 * (a + b) + half * x
    values = np.asarray(f(ts), dtype=float)
    return half * np.tensordot(w, values, axes=1)


def gauss_legendre(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float,
    max_depth: int = 30,
    nodes: int = 10,
) -> np.ndarray:
    """Integrate f over [a, b] with adaptive composite Gauss–Legendre panels.

    The integrand is evaluated in batches: ``f(ts)`` receives an array of
    abscissae and returns an array whose first axis runs over them. A panel is
    accepted once splitting it changes the panel sum by less than its share of
    ``tol`` (relative to the magnitude of the whole integral, floored at 1).

    Args:
        f: Batched integrand
        a: Lower limit
        b: Upper limit (b < a integrates with the opposite sign)
        tol: Panel-sum change tolerance
        max_depth: Maximum bisection depth
        nodes: Gauss–Legendre points per panel

    Returns:
        Integral with the shape of a single integrand value

    Raises:
        QuadratureNoConvergence: If a panel needs more than max_depth bisections
    """
    a = float(a)
    b = float(b)
    if a == b:
        return np.zeros_like(np.asarray(f(np.array([a])), dtype=float)[0])

    whole = _panel(f, a, b, nodes)
    scale = max(1.0, float(np.max(np.abs(whole))))
    length = abs(b - a)
    total = np.zeros_like(whole)
    # Depth-first, left panel first, so the summation order is deterministic.
    stack = [(a, b, whole, 0)]
    while stack:
        lo, hi, estimate, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _panel(f, lo, mid, nodes)
        right = _panel(f, mid, hi, nodes)
        change = float(np.max(np.abs(left + right - estimate)))
        if change < tol * scale * abs(hi - lo) / length:
            total = total + left + right
            continue
        if depth + 1 >= max_depth:
            raise QuadratureNoConvergence(
                f"Quadrature on [{a}, {b}] did not converge: panel [{lo}, {hi}] "
                f"changed by {change:.3e} at depth {depth + 1}"
            )
        stack.append((mid, hi, right, depth + 1))
        stack.append((lo, mid, left, depth + 1))
    return total


def fixed_rule(name: str, points: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a fixed rule on [0, 1].

    Args:
        name: One of rectangle (left endpoint), trapezoid, midpoint, gauss
        points: Number of Gauss–Legendre points when name is gauss

    Returns:
        Tuple of (nodes, weights); the weights sum to 1
    """
    if name == "rectangle":
        return np.array([0.0]), np.array([1.0])
    if name == "trapezoid":
        return np.array([0.0, 1.0]), np.array([0.5, 0.5])
    if name == "midpoint":
        return np.array([0.5]), np.array([1.0])
    if name == "gauss":
        if points < 1:
            raise ValueError("gauss rule needs at least one point")
        x, w = _legendre_rule(points)
        return 0.5 * (x + 1.0), 0.5 * w
    raise ValueError(f"Unknown quadrature rule '{name}'. Valid rules: {', '.join(FIXED_RULES)}")
