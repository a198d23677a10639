"""Built-in forced mechanical systems.

Every built-in is a natural system L = 1/2 v^T M v - V(q) with a force that is
linear in the velocity plus a constant, f = -C v + tau. Their derivatives are
known in closed form, so they carry analytic derivative evaluators and an
analytic acceleration Jacobian.
"""

from typing import Callable, Mapping, Optional

import numpy as np

from forced_vi.fms_core import SystemFMS

REQUIRED_PARAMS: dict[str, tuple[str, ...]] = {
    "damped_particle": ("alpha",),
    "forced_oscillator": ("mass", "stiffness", "damping"),
    "forced_pendulum": ("mass", "length", "gravity", "damping", "torque"),
    "damped_duffing": ("linear", "cubic", "damping"),
}


def natural_system(
    name: str,
    mass,
    potential: Callable[[np.ndarray], float],
    potential_gradient: Callable[[np.ndarray], np.ndarray],
    potential_hessian: Callable[[np.ndarray], np.ndarray],
    damping=0.0,
    constant_force=None,
    params: Optional[Mapping[str, float]] = None,
    closed_form_flow: Optional[Callable] = None,
    closed_form_tangent: Optional[Callable] = None,
) -> SystemFMS:
    """Build L = 1/2 v^T M v - V(q) with force -C v + tau and analytic derivatives.

    Args:
        name: System name
        mass: Constant mass matrix M (scalar for n = 1)
        potential: V(q)
        potential_gradient: grad V(q)
        potential_hessian: Hessian of V at q
        damping: Damping matrix C (scalar for n = 1)
        constant_force: Constant covector tau, zero when omitted
        params: Parameters recorded on the system
        closed_form_flow: Optional exact flow for the analytic oracle
        closed_form_tangent: Optional exact tangent flow for the analytic oracle
    """
    M = np.atleast_2d(np.asarray(mass, dtype=float))
    n = M.shape[0]
    if np.ndim(damping) == 0:
        C = float(damping) * np.eye(n)
    else:
        C = np.atleast_2d(np.asarray(damping, dtype=float))
    tau = np.zeros(n) if constant_force is None else np.atleast_1d(np.asarray(constant_force, dtype=float))
    if M.shape != (n, n) or C.shape != (n, n) or tau.shape != (n,):
        raise ValueError(f"Inconsistent shapes for '{name}': M {M.shape}, C {C.shape}, tau {tau.shape}")
    M_inv = np.linalg.inv(M)
    zeros = np.zeros((n, n))

    return SystemFMS(
        n=n,
        lagrangian=lambda q, v, p: 0.5 * float(v @ M @ v) - float(potential(q)),
        force=lambda q, v, p: -C @ v + tau,
        params=dict(params or {}),
        name=name,
        dL_dq=lambda q, v, p: -np.atleast_1d(potential_gradient(q)),
        dL_dv=lambda q, v, p: M @ v,
        d2L_dvdv=lambda q, v, p: M,
        d2L_dvdq=lambda q, v, p: zeros,
        d2L_dqdq=lambda q, v, p: -np.atleast_2d(potential_hessian(q)),
        force_jacobian=lambda q, v, p: (zeros, -C),
        acceleration_jacobian=lambda q, v, p: (-M_inv @ np.atleast_2d(potential_hessian(q)), -M_inv @ C),
        closed_form_flow=closed_form_flow,
        closed_form_tangent=closed_form_tangent,
    )


def _require_positive(name: str, **values: float) -> None:
    for key, value in values.items():
        if not value > 0:
            raise ValueError(f"{name}: parameter '{key}' must be positive, got {value}")


def _no_potential(q):
    return 0.0


def _zero_gradient(q):
    return np.zeros_like(q)


def _zero_hessian(q):
    return np.zeros((q.size, q.size))


def damped_particle(alpha: float) -> SystemFMS:
    """Unit-mass particle with friction: L = v^2/2, f = -alpha v dq.

    The flow is known in closed form:
    q(t) = q + v (1 - exp(-alpha t)) / alpha, v(t) = v exp(-alpha t).
    """
    _require_positive("damped_particle", alpha=alpha)

    def flow(t, q, v, p):
        a = p["alpha"]
        return q + v * (-np.expm1(-a * t)) / a, v * np.exp(-a * t)

    def tangent(t, q, v, p):
        a = p["alpha"]
        n = q.size
        eye = np.eye(n)
        return np.block(
            [[eye, (-np.expm1(-a * t) / a) * eye], [np.zeros((n, n)), np.exp(-a * t) * eye]]
        )

    return natural_system(
        "damped_particle",
        mass=1.0,
        potential=_no_potential,
        potential_gradient=_zero_gradient,
        potential_hessian=_zero_hessian,
        damping=alpha,
        params={"alpha": alpha},
        closed_form_flow=flow,
        closed_form_tangent=tangent,
    )


def free_particle(n: int = 1) -> SystemFMS:
    """Unforced unit-mass particle in R^n, moving on straight lines."""

    def flow(t, q, v, p):
        return q + t * v, v.copy()

    def tangent(t, q, v, p):
        eye = np.eye(q.size)
        return np.block([[eye, t * eye], [np.zeros_like(eye), eye]])

    return natural_system(
        "free_particle",
        mass=np.eye(n),
        potential=_no_potential,
        potential_gradient=_zero_gradient,
        potential_hessian=_zero_hessian,
        damping=0.0,
        closed_form_flow=flow,
        closed_form_tangent=tangent,
    )


def forced_oscillator(mass: float, stiffness: float, damping: float) -> SystemFMS:
    """L = m v^2/2 - k q^2/2 with viscous force -c v."""
    _require_positive("forced_oscillator", mass=mass)
    return natural_system(
        "forced_oscillator",
        mass=mass,
        potential=lambda q: 0.5 * stiffness * float(q @ q),
        potential_gradient=lambda q: stiffness * q,
        potential_hessian=lambda q: stiffness * np.eye(q.size),
        damping=damping,
        params={"mass": mass, "stiffness": stiffness, "damping": damping},
    )


def forced_pendulum(mass: float, length: float, gravity: float, damping: float, torque: float) -> SystemFMS:
    """Pendulum driven by a constant torque: L = m l^2 v^2/2 + m g l cos q, f = -c v + torque."""
    _require_positive("forced_pendulum", mass=mass, length=length)
    mgl = mass * gravity * length
    return natural_system(
        "forced_pendulum",
        mass=mass * length**2,
        potential=lambda q: -mgl * float(np.cos(q[0])),
        potential_gradient=lambda q: mgl * np.sin(q),
        potential_hessian=lambda q: np.atleast_2d(mgl * np.cos(q[0])),
        damping=damping,
        constant_force=[torque],
        params={"mass": mass, "length": length, "gravity": gravity, "damping": damping, "torque": torque},
    )


def damped_duffing(linear: float, cubic: float, damping: float) -> SystemFMS:
    """Duffing oscillator: L = v^2/2 - a q^2/2 - b q^4/4, f = -delta v."""
    return natural_system(
        "damped_duffing",
        mass=1.0,
        potential=lambda q: 0.5 * linear * float(q[0] ** 2) + 0.25 * cubic * float(q[0] ** 4),
        potential_gradient=lambda q: linear * q + cubic * q**3,
        potential_hessian=lambda q: np.atleast_2d(linear + 3.0 * cubic * q[0] ** 2),
        damping=damping,
        params={"linear": linear, "cubic": cubic, "damping": damping},
    )


_BUILDERS: dict[str, Callable[..., SystemFMS]] = {
    "damped_particle": damped_particle,
    "forced_oscillator": forced_oscillator,
    "forced_pendulum": forced_pendulum,
    "damped_duffing": damped_duffing,
}


def build_system(name: str, params: Mapping[str, float]) -> SystemFMS:
    """Build a registered system from its name and a complete parameter map.

    Raises:
        ValueError: If the name is unknown or the parameters are incomplete or unexpected
    """
    if name not in _BUILDERS:
        raise ValueError(f"Unknown system '{name}'. Valid systems: {', '.join(sorted(_BUILDERS))}")
    required = REQUIRED_PARAMS[name]
    missing = [key for key in required if key not in params]
    unknown = [key for key in params if key not in required]
    if missing or unknown:
        raise ValueError(f"System '{name}' expects parameters {list(required)}; missing {missing}, unknown {unknown}")
    return _BUILDERS[name](**{key: float(params[key]) for key in required})
