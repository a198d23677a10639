"""Experiment configuration for forcedvi."""

import json
import os
from pathlib import Path
from typing import Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, field_validator, model_validator

from forced_vi.errors import SchemaError, SchemaViolation
from forced_vi.settings import SolverSettings
from forced_vi.systems import REQUIRED_PARAMS

THREADS_ENV = "FORCEDVI_THREADS"

SystemName = Literal["damped_particle", "forced_oscillator", "forced_pendulum", "damped_duffing"]


class SystemConfig(BaseModel):
    """A built-in system and its parameters."""

    model_config = ConfigDict(extra="forbid")

    name: SystemName = Field(..., description="Built-in system name")
    params: dict[str, float] = Field(default_factory=dict, description="Parameter name to value")


class DiscretizationConfig(BaseModel):
    """How the system is discretized.

    ``linear`` uses the linear discretization with quadrature data from
    ``rule``; ``custom-quadrature`` (alias ``quadrature``) uses the same rule
    along the exact discretization; ``exact`` uses exact data; ``truncated_exact`` is the
    order-``order_r`` family of the damped particle.
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["linear", "exact", "truncated_exact", "custom-quadrature"] = "exact"
    rule: Literal["rectangle", "trapezoid", "midpoint", "gauss"] = "midpoint"
    gauss_nodes: int = Field(2, ge=1, le=20)
    order_r: int = Field(1, ge=1)
    alpha: Literal["one_sided", "symmetric"] = "one_sided"

    @field_validator("kind", mode="before")
    @classmethod
    def _quadrature_alias(cls, value):
        return "custom-quadrature" if value == "quadrature" else value


class InitialState(BaseModel):
    model_config = ConfigDict(extra="forbid")

    q: list[float] = Field(..., min_length=1)
    v: list[float] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _same_length(self) -> "InitialState":
        if len(self.q) != len(self.v):
            raise ValueError(f"q and v must have the same length, got {len(self.q)} and {len(self.v)}")
        return self


class ExperimentSpec(BaseModel):
    """Which experiment to run and on what grid."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["simulate", "order", "exactness", "correspond"]
    formulation: Literal["tq", "qq"] = "tq"
    h: Optional[PositiveFloat] = None
    h_grid: Optional[list[PositiveFloat]] = Field(None, min_length=1)
    N: int = Field(10, ge=1)
    initial_state: InitialState = Field(default_factory=lambda: InitialState(q=[0.0], v=[1.0]))
    expected_order: Optional[int] = Field(None, ge=1)
    norm: Literal["tq", "position"] = "tq"
    global_error: bool = False
    horizon: PositiveFloat = 1.0

    @model_validator(mode="after")
    def _grid_or_step(self) -> "ExperimentSpec":
        if self.kind in ("simulate", "exactness") and self.h is None:
            raise ValueError(f"experiment '{self.kind}' needs a step 'h'")
        if self.kind == "exactness" and self.N < 2:
            raise ValueError("experiment 'exactness' needs N >= 2")
        if self.kind == "simulate" and self.formulation == "qq" and self.N < 2:
            raise ValueError("Q x Q simulation needs N >= 2")
        return self


class ExperimentConfig(BaseModel):
    """Top-level experiment configuration (one JSON document)."""

    model_config = ConfigDict(extra="forbid")

    system: SystemConfig
    discretization: DiscretizationConfig = Field(default_factory=DiscretizationConfig)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    experiment: ExperimentSpec


def _dotted(loc: tuple) -> str:
    return ".".join(str(part) for part in loc) or "$"


def _semantic_violations(cfg: ExperimentConfig) -> list[SchemaViolation]:
    violations = []
    required = REQUIRED_PARAMS[cfg.system.name]
    for key in required:
        if key not in cfg.system.params:
            violations.append(SchemaViolation(f"system.params.{key}", "missing required parameter"))
    for key in cfg.system.params:
        if key not in required:
            violations.append(SchemaViolation(f"system.params.{key}", f"unknown parameter for {cfg.system.name}"))
    if cfg.discretization.kind == "truncated_exact" and cfg.system.name != "damped_particle":
        violations.append(SchemaViolation("discretization.kind", "truncated_exact is only defined for damped_particle"))
    exp = cfg.experiment
    if cfg.discretization.kind == "exact" and exp.kind == "order" and exp.global_error and exp.expected_order is None:
        violations.append(
            SchemaViolation("experiment.expected_order", "global error on exact data needs an expected order")
        )
    if len(cfg.experiment.initial_state.q) != 1:
        violations.append(SchemaViolation("experiment.initial_state.q", f"{cfg.system.name} has dimension 1"))
    return violations


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment configuration.

    Raises:
        SchemaError: With one violation per offending field path
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError([SchemaViolation("$", f"invalid JSON: {e}")])
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise SchemaError([SchemaViolation(_dotted(err["loc"]), err["msg"]) for err in e.errors()])
    violations = _semantic_violations(cfg)
    if violations:
        raise SchemaError(violations)
    return cfg


def load_config(path: Path) -> ExperimentConfig:
    """Load a configuration file.

    Raises:
        SchemaError: If the file cannot be read or is invalid
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SchemaError([SchemaViolation("$", f"cannot read {path}: {e}")])
    return parse_config(text)


def save_config(cfg: ExperimentConfig, path: Path) -> None:
    """Write a configuration as pretty-printed JSON."""
    Path(path).write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")


def example_config() -> ExperimentConfig:
    """Order experiment for the r = 2 truncated-exact damped particle."""
    return ExperimentConfig(
        system=SystemConfig(name="damped_particle", params={"alpha": 1.0}),
        discretization=DiscretizationConfig(kind="truncated_exact", order_r=2),
        experiment=ExperimentSpec(kind="order", h_grid=[0.2 * 2.0**-k for k in range(7)]),
    )


def threads_from_env(environ: Optional[Mapping[str, str]] = None) -> int:
    """Worker-pool bound from FORCEDVI_THREADS, 1 when unset.

    Raises:
        SchemaError: If the variable is not a positive integer
    """
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads < 1:
        raise SchemaError([SchemaViolation(THREADS_ENV, f"must be a positive integer, got {raw!r}")])
    return threads
