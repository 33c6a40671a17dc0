"""
support.py — Moving control region ω(t) = (a(t), b(t)) ⊂ (0, L).

The schedule is a list of breakpoints (t_j, a_j, b_j) interpolated linearly in t.
A single breakpoint denotes a static support valid for every t ≥ 0.
"""
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from memheat.core.errors import ConfigurationError, UsageError
from memheat.lab.geometry import Field, SpatialGrid
from memheat.utils.logger import logger


class Breakpoint(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    t: float
    left: float
    right: float


class MovingSupport(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    length: float
    breakpoints: List[Breakpoint]

    @field_validator("breakpoints")
    @classmethod
    def _non_empty(cls, v: List[Breakpoint]) -> List[Breakpoint]:
        if not v:
            raise ValueError("support schedule needs at least one breakpoint")
        return v

    @model_validator(mode="after")
    def _valid_schedule(self) -> "MovingSupport":
        for j, bp in enumerate(self.breakpoints):
            if bp.left < 0:
                raise ValueError(f"breakpoint {j}: left end a={bp.left} is negative")
            if bp.right > self.length:
                raise ValueError(f"breakpoint {j}: right end b={bp.right} exceeds L={self.length}")
            if not bp.left < bp.right:
                raise ValueError(f"breakpoint {j}: empty interval (a={bp.left}, b={bp.right})")
            if j and not bp.t > self.breakpoints[j - 1].t:
                raise ValueError(f"breakpoint {j}: time t={bp.t} is not strictly increasing")
        return self

    @classmethod
    def static(cls, length: float, left: float, right: float) -> "MovingSupport":
        return cls(length=length, breakpoints=[Breakpoint(t=0.0, left=left, right=right)])

    @classmethod
    def from_tuples(cls, length: float, rows: List[Tuple[float, float, float]]) -> "MovingSupport":
        return cls(length=length, breakpoints=[Breakpoint(t=t, left=a, right=b) for t, a, b in rows])

    @property
    def is_static(self) -> bool:
        lefts = {bp.left for bp in self.breakpoints}
        rights = {bp.right for bp in self.breakpoints}
        return len(lefts) == 1 and len(rights) == 1

    def require_horizon(self, horizon: float) -> None:
        """Schedule must span [0, T] (a static schedule spans any horizon)."""
        if len(self.breakpoints) == 1:
            return
        t0, t1 = self.breakpoints[0].t, self.breakpoints[-1].t
        if t0 > 0 or t1 < horizon:
            raise ConfigurationError(
                f"support schedule covers [{t0}, {t1}] but the horizon is [0, {horizon}]"
            )

    def interval(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """(a(t), b(t)); vectorized over t."""
        t_arr = np.asarray(t, dtype=float)
        times = np.array([bp.t for bp in self.breakpoints])
        lefts = np.array([bp.left for bp in self.breakpoints])
        rights = np.array([bp.right for bp in self.breakpoints])
        if len(times) == 1:
            if np.any(t_arr < 0):
                raise UsageError(f"t={t_arr.min()} is negative")
            return np.full_like(t_arr, lefts[0]), np.full_like(t_arr, rights[0])
        # tolerance absorbs the rounding in n*dt at the final time node
        slack = 1e-12 * max(1.0, abs(times[-1]))
        if np.any(t_arr < times[0] - slack) or np.any(t_arr > times[-1] + slack):
            raise UsageError(f"t outside the support schedule [{times[0]}, {times[-1]}]")
        return np.interp(t_arr, times, lefts), np.interp(t_arr, times, rights)


class CoverageReport(BaseModel):
    covered: bool
    uncovered_nodes: List[int]
    uncovered_positions: List[float]


def weight_matrix(s: MovingSupport, times, grid: SpatialGrid) -> np.ndarray:
    """Cell-averaged indicator, shape (len(times), n_interior)."""
    _check_grid(s, grid)
    a, b = s.interval(np.atleast_1d(times))
    lo = grid.nodes - grid.h / 2
    hi = grid.nodes + grid.h / 2
    overlap = np.minimum(hi[None, :], b[:, None]) - np.maximum(lo[None, :], a[:, None])
    return np.clip(overlap / grid.h, 0.0, 1.0)


def indicator_weights(s: MovingSupport, t: float, grid: SpatialGrid) -> Field:
    return Field(grid=grid, values=weight_matrix(s, [t], grid)[0])


def check_coverage(s: MovingSupport, grid: SpatialGrid, times) -> CoverageReport:
    """Every interior node must lie strictly inside ω(t_n) for some time-grid point."""
    _check_grid(s, grid)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    a, b = s.interval(times)
    _warn_fast_motion(a, b, grid)
    inside = (grid.nodes[None, :] > a[:, None]) & (grid.nodes[None, :] < b[:, None])
    missing = np.flatnonzero(~inside.any(axis=0))
    return CoverageReport(
        covered=missing.size == 0,
        uncovered_nodes=missing.tolist(),
        uncovered_positions=grid.nodes[missing].tolist(),
    )


def check_split(s: MovingSupport, grid: SpatialGrid, times) -> bool:
    """ω(t) leaves two components (0, a) and (b, L) at every time-grid point."""
    _check_grid(s, grid)
    a, b = s.interval(np.atleast_1d(np.asarray(times, dtype=float)))
    return bool(np.all(a > 0) and np.all(b < grid.length))


def _warn_fast_motion(a: np.ndarray, b: np.ndarray, grid: SpatialGrid) -> None:
    if a.size < 2:
        return
    shift = max(np.max(np.abs(np.diff(a))), np.max(np.abs(np.diff(b))))
    if shift > grid.h:
        logger.warning(
            f"Support moves {shift:.3g} per time step (> one cell, h={grid.h:.3g}); "
            "coverage on the time grid may miss nodes the continuous sweep reaches"
        )


def _check_grid(s: MovingSupport, grid: SpatialGrid) -> None:
    if not np.isclose(s.length, grid.length):
        raise UsageError(f"support is defined on (0, {s.length}) but the grid on (0, {grid.length})")
