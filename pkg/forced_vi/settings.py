"""Solver settings shared by every numerical routine."""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

MACHINE_EPS = float(np.finfo(float).eps)


class SolverSettings(BaseModel):
    """Tolerances and limits for Newton, quadrature, the ODE oracle and finite differences."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    newton_tol: float = Field(1e-12, gt=0, description="Max-norm residual tolerance")
    newton_max_iter: int = Field(50, ge=1, description="Newton iteration cap")
    max_backtracks: int = Field(20, ge=0, description="Line-search halvings per iteration")
    fd_step_scale: float = Field(
        MACHINE_EPS ** (1.0 / 3.0), gt=0, description="Relative central-difference step"
    )
    quad_tol: float = Field(1e-12, gt=0, description="Panel-sum change tolerance")
    quad_max_depth: int = Field(30, ge=1, description="Maximum bisection depth")
    ode_tol: float = Field(1e-12, gt=0, description="Step-halving agreement tolerance")
    ode_max_steps: int = Field(2**20, ge=1, description="Step cap of the RK4 oracle")
    regularity_det_floor: float = Field(1e-10, gt=0, description="Minimum |det F2L|")
    regularity_cond_ceiling: float = Field(1e10, gt=0, description="Maximum cond(F2L)")

    @property
    def noise_floor(self) -> float:
        """Largest of the solver tolerances."""
        return max(self.newton_tol, self.quad_tol, self.ode_tol)


DEFAULT_SETTINGS = SolverSettings()
