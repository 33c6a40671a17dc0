"""
reduction.py — Heat equation + ODE cascade assembly.

For a kernel with companion system (order m, recurrence c, seeds s) the memory term
z_k(t) = ∫_0^t M^(k-1)(t-s) L y(s) ds closes into

    y_t   = bΔy + σ z_1 + χ_ω(t) u
    z_k'  = s_{k-1} L y + z_{k+1}               (k < m)
    z_m'  = s_{m-1} L y + Σ_j c_j z_{j+1}

with L = Δ, σ = +1 when the memory acts on Δy, and L = I, σ = -1 when it acts on y.
"""
import hashlib
import json
from enum import Enum
from typing import TYPE_CHECKING, Dict, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import sparse

from memheat.core.errors import ConfigurationError, UsageError
from memheat.lab.geometry import Field, SpatialGrid, norm
from memheat.lab.kernels import (
    CompanionSystem, ExpPolyKernel, Kernel, TaylorKernel, companion, describe_kernel, eval_kernel,
)
from memheat.lab.support import MovingSupport
from memheat.utils.logger import logger

if TYPE_CHECKING:
    from memheat.lab.simulator import Trajectory


class MemoryPlacement(str, Enum):
    ON_LAPLACIAN = "on_laplacian"   # y_t - ∫M(t-s)Δy ds - bΔy = χu
    ON_STATE = "on_state"           # y_t - bΔy + ∫M(t-s)y ds = χu

    @property
    def sign(self) -> float:
        return 1.0 if self is MemoryPlacement.ON_LAPLACIAN else -1.0

    def spatial_operator(self, grid: SpatialGrid) -> sparse.spmatrix:
        if self is MemoryPlacement.ON_LAPLACIAN:
            return grid.laplacian_matrix
        return sparse.identity(grid.n_interior, format="csr")


class CoupledSystem(BaseModel):
    """Spatially discretized heat + cascade system. Immutable once built."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: SpatialGrid
    placement: MemoryPlacement
    diffusivity: float
    kernel: Kernel
    companion: CompanionSystem
    support: MovingSupport
    horizon: float
    formulation: Literal["cascade", "integrated"] = "cascade"

    @property
    def order(self) -> int:
        return self.companion.order

    @property
    def field_names(self) -> Tuple[str, ...]:
        if self.formulation == "integrated":
            return ("z", "y")
        return ("y",) + tuple(f"z{k}" for k in range(1, self.order + 1))

    @property
    def n_fields(self) -> int:
        return len(self.field_names)

    @property
    def state_block(self) -> int:
        return self.field_names.index("y")

    @property
    def memory_block(self) -> int:
        """Block that carries the memory accumulation targeted at time T."""
        return 0 if self.formulation == "integrated" else 1

    @property
    def control_blocks(self) -> Tuple[int, ...]:
        # the integrated form substitutes z_t into the y equation, so u enters both rows
        return (0, 1) if self.formulation == "integrated" else (0,)

    def target_blocks(self, all_cascade: bool = False) -> Tuple[int, ...]:
        if self.formulation == "integrated" or all_cascade:
            return tuple(range(self.n_fields))
        return (self.state_block, self.memory_block)

    def operator(self) -> sparse.csr_matrix:
        """Block generator A of X' = A X + B(t) u, X = (fields...) stacked."""
        n = self.grid.n_interior
        lap = self.grid.laplacian_matrix
        eye = sparse.identity(n, format="csr")
        F = self.n_fields
        blocks = [[None] * F for _ in range(F)]

        if self.formulation == "integrated":
            # z_t = Δz + y + χu ; y_t = Δz + χu
            blocks[0][0] = lap
            blocks[0][1] = eye
            blocks[1][0] = lap
        else:
            m = self.order
            L = self.placement.spatial_operator(self.grid)
            c, s = self.companion.recurrence, self.companion.seeds
            blocks[0][0] = self.diffusivity * lap
            blocks[0][1] = self.placement.sign * eye
            for k in range(1, m + 1):
                blocks[k][0] = s[k - 1] * L
                if k < m:
                    blocks[k][k + 1] = eye
            for j in range(m):
                term = c[j] * eye
                blocks[m][j + 1] = term if blocks[m][j + 1] is None else blocks[m][j + 1] + term

        for i in range(F):
            if blocks[i][i] is None:
                blocks[i][i] = sparse.csr_matrix((n, n))
        return sparse.bmat(blocks, format="csr")

    def initial_state(self, y0: Field) -> np.ndarray:
        if y0.grid != self.grid:
            raise UsageError("initial data lives on a different grid than the system")
        state = np.zeros((self.n_fields, self.grid.n_interior))
        state[self.state_block] = y0.values
        if self.formulation == "integrated":
            state[0] = y0.values
        return state

    def describe(self) -> Dict:
        return {
            "formulation": self.formulation,
            "placement": self.placement.value,
            "diffusivity": self.diffusivity,
            "kernel": describe_kernel(self.kernel),
            "companion": self.companion.model_dump(),
            "grid": self.grid.model_dump(),
            "support": self.support.model_dump(),
            "horizon": self.horizon,
        }

    def fingerprint(self) -> str:
        payload = json.dumps(self.describe(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def validate_diffusivity(placement: MemoryPlacement, b: float, allow_degenerate: bool) -> None:
    if b < 0 or not np.isfinite(b):
        raise ConfigurationError(f"diffusivity b must be a finite nonnegative number, got {b}")
    if b == 0 and placement is MemoryPlacement.ON_LAPLACIAN and not allow_degenerate:
        raise ConfigurationError(
            "b=0 with memory on Δy removes instantaneous diffusion; "
            "set allow_degenerate_diffusion to run it anyway"
        )


def build_cascade(
    kernel: Kernel,
    placement: MemoryPlacement,
    b: float,
    grid: SpatialGrid,
    support: MovingSupport,
    horizon: float,
    allow_degenerate: bool = False,
) -> CoupledSystem:
    if isinstance(kernel, TaylorKernel):
        raise UsageError("taylor kernels give an infinite cascade; truncate() first")
    placement = MemoryPlacement(placement)
    validate_diffusivity(placement, b, allow_degenerate)
    if not horizon > 0:
        raise ConfigurationError(f"horizon T must be positive, got {horizon}")
    support.require_horizon(horizon)
    if not np.isclose(support.length, grid.length):
        raise ConfigurationError(f"support lives on (0, {support.length}), grid on (0, {grid.length})")

    comp = companion(kernel)
    logger.debug(f"Cascade for M={describe_kernel(kernel)}: order {comp.order}, seeds {comp.seeds}")
    return CoupledSystem(
        grid=grid, placement=placement, diffusivity=float(b), kernel=kernel,
        companion=comp, support=support, horizon=float(horizon),
    )


def _is_unit_kernel(kernel: Kernel) -> bool:
    return isinstance(kernel, ExpPolyKernel) and kernel.rate == 0.0 and kernel.coeffs == [1.0]


def build_integrated_transform(
    grid: SpatialGrid,
    support: MovingSupport,
    horizon: float,
    b: float = 1.0,
    kernel: Kernel = ExpPolyKernel(coeffs=[1.0]),
) -> CoupledSystem:
    """(z, y) system for z = y + ∫_0^t y ds, valid only for M ≡ 1 and b = 1."""
    if b != 1.0 or not _is_unit_kernel(kernel):
        raise UsageError(
            f"the integrated transform needs M ≡ 1 and b = 1, got M={describe_kernel(kernel)}, b={b}"
        )
    system = build_cascade(kernel, MemoryPlacement.ON_LAPLACIAN, b, grid, support, horizon)
    return system.model_copy(update={"formulation": "integrated"})


# ── Direct quadrature of the memory term ──────────────────────────────────────

def memory_integral(traj: "Trajectory", k: Kernel, placement: MemoryPlacement, t: float) -> Field:
    """Trapezoidal ∫_0^t M(t-s) L y(s) ds from the stored y history."""
    n = traj.time_grid.index_of(t)
    grid = traj.grid
    if n == 0:
        return grid.zeros()
    times = traj.time_grid.times[: n + 1]
    ys = traj.field("y")[: n + 1]
    Ly = (MemoryPlacement(placement).spatial_operator(grid) @ ys.T).T
    weights = traj.time_grid.dt * eval_kernel(k, times[n] - times)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return Field(grid=grid, values=weights @ Ly)


def memory_residual(traj: "Trajectory", k: Kernel, placement: MemoryPlacement, t: float) -> float:
    return norm(memory_integral(traj, k, placement, t))
