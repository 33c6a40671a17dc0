"""
simulator.py — Crank–Nicolson time stepping of coupled systems, and a direct
convolution-quadrature integrator used as an independent reference.
"""
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydField, field_validator, model_validator
from scipy import sparse
from scipy.sparse.linalg import splu

from memheat.core.errors import NumericalError, UsageError
from memheat.core.observability import SIMULATIONS_TOTAL, track_operation
from memheat.lab.geometry import Field, SpatialGrid
from memheat.lab.kernels import Kernel, describe_kernel, eval_kernel
from memheat.lab.reduction import CoupledSystem, MemoryPlacement, validate_diffusivity
from memheat.lab.support import MovingSupport, weight_matrix
from memheat.utils.logger import logger


class TimeGrid(BaseModel):
    model_config = ConfigDict(frozen=True)

    horizon: float
    n_steps: int

    @field_validator("horizon")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"horizon T must be positive, got {v}")
        return v

    @field_validator("n_steps")
    @classmethod
    def _steps(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"n_steps must be >= 1, got {v}")
        return v

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        n = int(round(t / self.dt))
        if n < 0 or n > self.n_steps or abs(n * self.dt - t) > 1e-9 * max(self.dt, abs(t)):
            raise UsageError(f"t={t} is not on the time grid (dt={self.dt}, T={self.horizon})")
        return n

    def trapezoid_weights(self) -> np.ndarray:
        tau = np.full(self.n_steps + 1, self.dt)
        tau[0] = tau[-1] = 0.5 * self.dt
        return tau


class ControlField(BaseModel):
    """u(t_n, x_i) on every time node; applied through the indicator weights."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    time_grid: TimeGrid
    grid: SpatialGrid
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"control values must be (n_steps+1, n_interior), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("control values must be finite")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _shape(self) -> "ControlField":
        expected = (self.time_grid.n_steps + 1, self.grid.n_interior)
        if self.values.shape != expected:
            raise ValueError(f"control shape {self.values.shape} != {expected}")
        return self

    @classmethod
    def zeros(cls, time_grid: TimeGrid, grid: SpatialGrid) -> "ControlField":
        return cls(time_grid=time_grid, grid=grid, values=np.zeros((time_grid.n_steps + 1, grid.n_interior)))

    def at(self, n: int) -> Field:
        return Field(grid=self.grid, values=self.values[n])


class Trajectory(BaseModel):
    """Snapshots of every state field at every time node: states[n, field, node]."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    time_grid: TimeGrid
    grid: SpatialGrid
    field_names: Tuple[str, ...]
    states: np.ndarray
    metadata: Dict[str, Any] = PydField(default_factory=dict)

    def field(self, name: str) -> np.ndarray:
        try:
            return self.states[:, self.field_names.index(name), :]
        except ValueError:
            raise UsageError(f"trajectory has no field '{name}' (fields: {self.field_names})") from None

    def snapshot(self, n: int, name: str = "y") -> Field:
        return Field(grid=self.grid, values=self.field(name)[n])

    def terminal(self, name: str = "y") -> Field:
        return self.snapshot(self.time_grid.n_steps, name)


# ── Crank–Nicolson stepping ───────────────────────────────────────────────────

class CrankNicolsonStepper:
    """
    (I - dt/2 A) X^{n+1} = (I + dt/2 A) X^n + dt B f^{n+1/2},  f^{n+1/2} = (w_n u_n + w_{n+1} u_{n+1}) / 2.

    A does not depend on t (the support only enters the forcing), so the step matrix
    is factorized once and shared by forward runs and transposed (adjoint) sweeps.
    """

    def __init__(self, system: CoupledSystem, time_grid: TimeGrid):
        self.system = system
        self.time_grid = time_grid
        self.dt = time_grid.dt
        self.n = system.grid.n_interior
        self.shape = (system.n_fields, self.n)

        A = system.operator()
        eye = sparse.identity(A.shape[0], format="csr")
        self._explicit = (eye + 0.5 * self.dt * A).tocsr()
        self._explicit_T = self._explicit.T.tocsr()
        try:
            self._lu = splu((eye - 0.5 * self.dt * A).tocsc())
        except RuntimeError as e:
            raise NumericalError(
                f"Crank–Nicolson step matrix is singular: {e}",
                diagnostics={"dt": self.dt, "unknowns": A.shape[0], "fields": system.field_names},
            ) from e
        self.weights = weight_matrix(system.support, time_grid.times, system.grid)

    def forcing(self, u_values: np.ndarray) -> np.ndarray:
        wu = self.weights * u_values
        return 0.5 * (wu[:-1] + wu[1:])

    def run(self, u_values: np.ndarray, x0: np.ndarray, store: bool = True) -> np.ndarray:
        """All snapshots (N+1, F, n) when store, else only the terminal state (F, n)."""
        N = self.time_grid.n_steps
        f = self.forcing(u_values)
        x = np.array(x0, dtype=float).reshape(-1)
        states = np.empty((N + 1,) + self.shape) if store else None
        if store:
            states[0] = x.reshape(self.shape)
        for step in range(N):
            rhs = self._explicit @ x
            for block in self.system.control_blocks:
                rhs[block * self.n:(block + 1) * self.n] += self.dt * f[step]
            x = self._lu.solve(rhs)
            if not np.all(np.isfinite(x)):
                raise NumericalError(
                    "non-finite state during Crank–Nicolson stepping",
                    diagnostics={"step": step + 1, "t": (step + 1) * self.dt, "dt": self.dt},
                )
            if store:
                states[step + 1] = x.reshape(self.shape)
        return states if store else x.reshape(self.shape)

    def adjoint(self, terminal_gradient: np.ndarray) -> np.ndarray:
        """dΦ/df^{n+1/2} for n = 0..N-1, given dΦ/dX^N; backward sweep with transposed steps."""
        N = self.time_grid.n_steps
        mu = np.array(terminal_gradient, dtype=float).reshape(-1)
        sens = np.zeros((N, self.n))
        for step in range(N - 1, -1, -1):
            nu = self._lu.solve(mu, trans="T")
            for block in self.system.control_blocks:
                sens[step] += self.dt * nu[block * self.n:(block + 1) * self.n]
            mu = self._explicit_T @ nu
        return sens

    def control_sensitivity(self, forcing_sensitivity: np.ndarray) -> np.ndarray:
        """Chain rule through the half-step averaging: dΦ/du_n, shape (N+1, n)."""
        acc = np.zeros((self.time_grid.n_steps + 1, self.n))
        acc[:-1] += forcing_sensitivity
        acc[1:] += forcing_sensitivity
        return 0.5 * self.weights * acc


def _check_compatible(grid: SpatialGrid, u: ControlField, y0: Field, tg: TimeGrid) -> None:
    if y0.grid != grid or u.grid != grid:
        raise UsageError("control, initial data and system must share one spatial grid")
    if u.time_grid != tg:
        raise UsageError("control is defined on a different time grid")


@track_operation("simulate")
def simulate(sys: CoupledSystem, u: ControlField, y0: Field, tg: TimeGrid) -> Trajectory:
    _check_compatible(sys.grid, u, y0, tg)
    if not np.isclose(tg.horizon, sys.horizon):
        raise UsageError(f"time grid horizon {tg.horizon} differs from the system horizon {sys.horizon}")
    stepper = CrankNicolsonStepper(sys, tg)
    states = stepper.run(u.values, sys.initial_state(y0))
    SIMULATIONS_TOTAL.labels(scheme="crank-nicolson").inc()
    logger.debug(f"Simulated {sys.formulation} system {sys.fingerprint()} over {tg.n_steps} steps")
    return Trajectory(
        time_grid=tg, grid=sys.grid, field_names=sys.field_names, states=states,
        metadata={"scheme": "crank-nicolson", "system": sys.fingerprint(), "formulation": sys.formulation},
    )


@track_operation("simulate_convolution")
def simulate_convolution(
    k: Kernel,
    placement: MemoryPlacement,
    b: float,
    support: MovingSupport,
    u: ControlField,
    y0: Field,
    tg: TimeGrid,
    allow_degenerate: bool = False,
) -> Trajectory:
    """
    Same θ=1/2 stepping with the memory term I^n = ∫_0^{t_n} M(t_n - s) L y(s) ds taken by
    trapezoidal quadrature over the full history. Cost O(n_steps²). Fields: (y, z1 = I).
    """
    grid = y0.grid
    _check_compatible(grid, u, y0, tg)
    placement = MemoryPlacement(placement)
    validate_diffusivity(placement, b, allow_degenerate)
    support.require_horizon(tg.horizon)

    dt, N, n = tg.dt, tg.n_steps, grid.n_interior
    sigma = placement.sign
    lap = grid.laplacian_matrix
    L = placement.spatial_operator(grid)
    eye = sparse.identity(n, format="csr")
    kernel_lags = np.asarray(eval_kernel(k, tg.times), dtype=float)
    m0 = kernel_lags[0]

    implicit = (eye - 0.5 * dt * b * lap - sigma * 0.25 * dt * dt * m0 * L).tocsc()
    try:
        lu = splu(implicit)
    except RuntimeError as e:
        raise NumericalError(
            f"convolution step matrix is singular: {e}", diagnostics={"dt": dt, "M(0)": m0},
        ) from e
    explicit = (eye + 0.5 * dt * b * lap).tocsr()

    weights = weight_matrix(support, tg.times, grid)
    wu = weights * u.values
    f = 0.5 * (wu[:-1] + wu[1:])

    ys = np.zeros((N + 1, n))
    Ly = np.zeros((N + 1, n))
    memory = np.zeros((N + 1, n))
    ys[0] = y0.values
    Ly[0] = L @ ys[0]
    for step in range(N):
        # history part of I^{n+1}: lags t_{n+1} - t_j for j = 0..n, endpoint weight at j = 0
        lag_weights = kernel_lags[step + 1:0:-1].copy()
        lag_weights[0] *= 0.5
        known = dt * (lag_weights @ Ly[: step + 1])
        rhs = explicit @ ys[step] + 0.5 * dt * sigma * (memory[step] + known) + dt * f[step]
        ys[step + 1] = lu.solve(rhs)
        if not np.all(np.isfinite(ys[step + 1])):
            raise NumericalError(
                "non-finite state during convolution stepping",
                diagnostics={"step": step + 1, "t": tg.times[step + 1], "dt": dt},
            )
        Ly[step + 1] = L @ ys[step + 1]
        memory[step + 1] = known + 0.5 * dt * m0 * Ly[step + 1]

    SIMULATIONS_TOTAL.labels(scheme="convolution").inc()
    states = np.stack([ys, memory], axis=1)
    return Trajectory(
        time_grid=tg, grid=grid, field_names=("y", "z1"), states=states,
        metadata={"scheme": "convolution-quadrature", "kernel": describe_kernel(k), "placement": placement.value},
    )


def relative_deviation(a: np.ndarray, b: np.ndarray, reference: Optional[np.ndarray] = None) -> float:
    """max |a - b| / max |reference| (reference defaults to b)."""
    ref = np.max(np.abs(b if reference is None else reference))
    diff = np.max(np.abs(np.asarray(a) - np.asarray(b)))
    return float(diff / ref) if ref > 0 else float(diff)
