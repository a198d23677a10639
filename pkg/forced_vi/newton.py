"""Damped Newton iteration used by every implicit solve in the package."""

import logging
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg

from forced_vi import numdiff
from forced_vi.errors import NewtonNoConvergence, SingularJacobian
from forced_vi.settings import SolverSettings

logger = logging.getLogger(__name__)


class NewtonResult(NamedTuple):
    """Outcome of a converged Newton solve."""

    x: np.ndarray
    residual_norm: float
    iterations: int
    guess_distance: float


def _max_norm(r: np.ndarray) -> float:
    return float(np.max(np.abs(r))) if r.size else 0.0


def solve(
    residual: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    settings: SolverSettings,
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    label: str = "newton",
) -> NewtonResult:
    """Solve residual(x) = 0 from x0.

    Each iteration solves J dx = -F and then halves the step until the max-norm
    of the residual decreases. The Jacobian is a central difference of the
    residual unless an analytic one is given.

    Args:
        residual: Vector function of x
        x0: Initial guess
        settings: Tolerance, iteration and backtracking limits
        jacobian: Optional analytic Jacobian of residual
        label: Name used in log records and error messages

    Returns:
        NewtonResult with the solution, final residual norm, iteration count and
        the max-norm distance from x0

    Raises:
        SingularJacobian: If the linear solve fails or is not finite
        NewtonNoConvergence: If no step decreases the residual or the iteration cap is hit
    """
    x = np.array(x0, dtype=float, copy=True)
    start = x.copy()
    F = np.atleast_1d(np.asarray(residual(x), dtype=float))
    norm = _max_norm(F)

    for iteration in range(settings.newton_max_iter + 1):
        if norm <= settings.newton_tol:
            logger.debug("%s converged in %d iterations, |F| = %.3e", label, iteration, norm)
            return NewtonResult(x, norm, iteration, _max_norm(x - start))
        if iteration == settings.newton_max_iter:
            break

        J = jacobian(x) if jacobian is not None else numdiff.jacobian(residual, x, settings.fd_step_scale)
        try:
            dx = scipy.linalg.solve(np.atleast_2d(J), -F)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise SingularJacobian(f"{label}: Jacobian solve failed at iteration {iteration}: {e}")
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"{label}: non-finite Newton step at iteration {iteration}")

        step = 1.0
        for _ in range(settings.max_backtracks + 1):
            candidate = x + step * dx
            F_candidate = np.atleast_1d(np.asarray(residual(candidate), dtype=float))
            norm_candidate = _max_norm(F_candidate)
            if np.isfinite(norm_candidate) and norm_candidate < norm:
                break
            step *= 0.5
        else:
            raise NewtonNoConvergence(
                f"{label}: line search found no decrease from |F| = {norm:.3e}",
                residual_norm=norm,
                iterations=iteration,
                label=label,
            )
        logger.debug("%s iteration %d: |F| = %.3e, step = %g", label, iteration + 1, norm_candidate, step)
        x, F, norm = candidate, F_candidate, norm_candidate

    raise NewtonNoConvergence(
        f"{label}: no convergence after {settings.newton_max_iter} iterations, |F| = {norm:.3e}",
        residual_norm=norm,
        iterations=settings.newton_max_iter,
        label=label,
    )
