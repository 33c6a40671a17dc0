"""
schema.py — Experiment configuration (one JSON file = one experiment = one output directory).

Example:
    {
      "name": "moving-support-polynomial",
      "domain": {"length": 1.0, "n_interior": 30},
      "time": {"horizon": 1.0, "n_steps": 100},
      "memory": {"kernel": {"kind": "exp_poly", "rate": 0.0, "coeffs": [1.0, 1.0]},
                 "placement": "on_state", "diffusivity": 1.0},
      "support": {"breakpoints": [{"t": 0.0, "left": 0.05, "right": 0.3},
                                  {"t": 1.0, "left": 0.7, "right": 0.95}]},
      "initial": {"profile": "eigenmode", "mode": 1},
      "task": {"kind": "sweep", "epsilons": [1e-2, 1e-3, 1e-4]}
    }
"""
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from memheat.lab.geometry import Field as GridField, SpatialGrid
from memheat.lab.kernels import Kernel
from memheat.lab.reduction import MemoryPlacement
from memheat.lab.support import Breakpoint, MovingSupport


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainSpec(_Strict):
    length: float = Field(gt=0)
    n_interior: int = Field(ge=2)


class TimeSpec(_Strict):
    horizon: float = Field(gt=0)
    n_steps: int = Field(ge=1)


class MemorySpec(_Strict):
    kernel: Kernel
    truncation_order: Optional[int] = Field(default=None, ge=0)
    placement: MemoryPlacement = MemoryPlacement.ON_LAPLACIAN
    diffusivity: float = Field(default=1.0, ge=0)
    allow_degenerate_diffusion: bool = False
    formulation: Literal["cascade", "integrated"] = "cascade"


class SupportSpec(_Strict):
    breakpoints: List[Breakpoint] = Field(min_length=1)


# ── Initial data profiles ─────────────────────────────────────────────────────

class EigenmodeProfile(_Strict):
    profile: Literal["eigenmode"] = "eigenmode"
    mode: int = Field(default=1, ge=1)
    amplitude: float = 1.0

    def sample(self, grid: SpatialGrid) -> GridField:
        return grid.sample(lambda x: self.amplitude * np.sin(self.mode * np.pi * x / grid.length))


class GaussianProfile(_Strict):
    profile: Literal["gaussian"] = "gaussian"
    center: float
    width: float = Field(gt=0)
    amplitude: float = 1.0

    def sample(self, grid: SpatialGrid) -> GridField:
        return grid.sample(lambda x: self.amplitude * np.exp(-((x - self.center) / self.width) ** 2))


class ConstantProfile(_Strict):
    profile: Literal["constant"] = "constant"
    value: float = 1.0

    def sample(self, grid: SpatialGrid) -> GridField:
        return grid.sample(lambda x: np.full_like(x, self.value))


InitialDataSpec = Annotated[
    Union[EigenmodeProfile, GaussianProfile, ConstantProfile],
    Field(discriminator="profile"),
]


# ── Tasks ─────────────────────────────────────────────────────────────────────

class SimulateTask(_Strict):
    kind: Literal["simulate"] = "simulate"
    scheme: Literal["cascade", "convolution"] = "cascade"


class ControlTask(_Strict):
    kind: Literal["control"] = "control"
    epsilon: float = Field(gt=0)


class SweepTask(_Strict):
    kind: Literal["sweep"] = "sweep"
    epsilons: List[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _decreasing(self) -> "SweepTask":
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("every ε must be positive")
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError(f"ε list must be strictly decreasing, got {self.epsilons}")
        return self


class TruncationTask(_Strict):
    kind: Literal["truncation"] = "truncation"
    orders: List[int] = Field(min_length=1)
    # exact kernel for the convolution reference; defaults to the full Taylor data
    reference: Optional[Kernel] = None


TaskSpec = Annotated[
    Union[SimulateTask, ControlTask, SweepTask, TruncationTask],
    Field(discriminator="kind"),
]


class SolverSpec(_Strict):
    tol: Optional[float] = Field(default=None, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)
    penalize_all_cascade: bool = False


class OutputSpec(_Strict):
    directory: Optional[str] = None
    stride: Optional[int] = Field(default=None, ge=1)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    domain: DomainSpec
    time: TimeSpec
    memory: MemorySpec
    support: SupportSpec
    initial: InitialDataSpec = EigenmodeProfile()
    task: TaskSpec = SimulateTask()
    solver: SolverSpec = SolverSpec()
    output: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _support_fits_domain(self) -> "ExperimentConfig":
        try:
            MovingSupport(length=self.domain.length, breakpoints=self.support.breakpoints)
        except ValidationError as e:
            raise ValueError("support schedule: " + "; ".join(err["msg"] for err in e.errors())) from None
        return self

    def moving_support(self) -> MovingSupport:
        return MovingSupport(length=self.domain.length, breakpoints=self.support.breakpoints)
