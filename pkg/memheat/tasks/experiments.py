"""
experiments.py — Experiment tasks: simulate, control, sweep, truncation.
Each task receives a built ExperimentContext and its validated task block.
"""
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from memheat.core.errors import UsageError
from memheat.core.schema import (
    ControlTask, ExperimentConfig, SimulateTask, SweepTask, TruncationTask,
)
from memheat.lab.control import ControlProblem, SweepResult, epsilon_sweep, solve_penalized
from memheat.lab.geometry import Field, SpatialGrid, norm
from memheat.lab.kernels import (
    Kernel, TaylorKernel, describe_kernel, eval_kernel, truncate, truncation_bound,
)
from memheat.lab.reduction import CoupledSystem, build_cascade, memory_residual
from memheat.lab.simulator import (
    ControlField, TimeGrid, Trajectory, relative_deviation, simulate, simulate_convolution,
)
from memheat.lab.support import MovingSupport
from memheat.tasks.registry import registry
from memheat.utils.logger import logger


class ExperimentContext(BaseModel):
    """Everything a task needs, built once from a validated config."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: ExperimentConfig
    grid: SpatialGrid
    time_grid: TimeGrid
    support: MovingSupport
    kernel: Kernel
    effective_kernel: Optional[Kernel]
    system: Optional[CoupledSystem]
    y0: Field
    tol: float
    max_iter: int

    def require_system(self) -> CoupledSystem:
        if self.system is None:
            raise UsageError(
                "this task needs a finite cascade; give memory.truncation_order for taylor kernels"
            )
        return self.system

    def free_control(self) -> ControlField:
        return ControlField.zeros(self.time_grid, self.grid)


class TaskOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    results: Dict[str, Any]
    trajectory: Optional[Trajectory] = None
    sweep: Optional[SweepResult] = None
    truncation_rows: Optional[List[Dict[str, float]]] = None


def _memory_field(traj: Trajectory) -> str:
    return "z1" if "z1" in traj.field_names else "z"


def _terminal_report(ctx: ExperimentContext, traj: Trajectory, kernel: Optional[Kernel] = None) -> Dict[str, Any]:
    memory = ctx.config.memory
    kernel = kernel or ctx.effective_kernel or ctx.kernel
    y_T = norm(traj.terminal("y"))
    y_0 = norm(ctx.y0)
    return {
        "residual_y": y_T,
        "relative_residual_y": y_T / y_0 if y_0 > 0 else 0.0,
        "memory_quadrature_residual": memory_residual(traj, kernel, memory.placement, ctx.time_grid.horizon),
    }


@registry.register(name="simulate", description="Free evolution (u = 0) of the memory heat system.",
                   spec_model=SimulateTask)
def run_simulation(ctx: ExperimentContext, spec: SimulateTask) -> TaskOutcome:
    memory = ctx.config.memory
    if spec.scheme == "convolution":
        traj = simulate_convolution(
            ctx.kernel, memory.placement, memory.diffusivity, ctx.support,
            ctx.free_control(), ctx.y0, ctx.time_grid, memory.allow_degenerate_diffusion,
        )
    else:
        traj = simulate(ctx.require_system(), ctx.free_control(), ctx.y0, ctx.time_grid)

    exact = ctx.kernel if spec.scheme == "convolution" else None
    results = _terminal_report(ctx, traj, exact)
    results.update({
        "scheme": spec.scheme,
        "residual_z1": norm(traj.terminal(_memory_field(traj))),
        "energy": 0.0,
        "iterations": 0,
        "converged": True,
        "slope": None,
    })
    return TaskOutcome(results=results, trajectory=traj)


@registry.register(name="control", description="Penalized null control for one ε.", spec_model=ControlTask)
def run_control(ctx: ExperimentContext, spec: ControlTask) -> TaskOutcome:
    system = ctx.require_system()
    problem = ControlProblem(
        system=system, y0=ctx.y0, time_grid=ctx.time_grid, epsilon=spec.epsilon,
        penalize_all_cascade=ctx.config.solver.penalize_all_cascade,
    )
    solution = solve_penalized(problem, ctx.tol, ctx.max_iter)
    traj = simulate(system, solution.control, ctx.y0, ctx.time_grid)

    results = _terminal_report(ctx, traj)
    results.update({
        "epsilon": spec.epsilon,
        "cost": solution.cost,
        "energy": solution.energy,
        "residual_y": solution.residual_y,
        "residual_z1": solution.residual_z1,
        "residuals": solution.residuals,
        "iterations": solution.iterations,
        "gradient_norm": solution.gradient_norm,
        "converged": solution.converged,
        "slope": None,
    })
    return TaskOutcome(results=results, trajectory=traj)


@registry.register(name="sweep", description="Penalized solves over decreasing ε with warm starts.",
                   spec_model=SweepTask)
def run_sweep(ctx: ExperimentContext, spec: SweepTask) -> TaskOutcome:
    system = ctx.require_system()
    template = ControlProblem(
        system=system, y0=ctx.y0, time_grid=ctx.time_grid, epsilon=spec.epsilons[0],
        penalize_all_cascade=ctx.config.solver.penalize_all_cascade,
    )
    sweep = epsilon_sweep(template, spec.epsilons, ctx.tol, ctx.max_iter)
    traj = simulate(system, sweep.final_control, ctx.y0, ctx.time_grid)

    last = sweep.points[-1]
    results = _terminal_report(ctx, traj)
    results.update({
        "epsilon": last.epsilon,
        "energy": last.energy,
        "residual_y": last.residual_y,
        "residual_z1": last.residual_z1,
        "iterations": sum(p.iterations for p in sweep.points),
        "converged": all(p.converged for p in sweep.points),
        "slope": sweep.slope,
        "growth_ratio": sweep.growth_ratio,
        "curve": [p.model_dump() for p in sweep.points],
    })
    return TaskOutcome(results=results, trajectory=traj, sweep=sweep)


@registry.register(name="truncation",
                   description="Taylor truncations of an analytic kernel against a convolution reference.",
                   spec_model=TruncationTask)
def run_truncation(ctx: ExperimentContext, spec: TruncationTask) -> TaskOutcome:
    if not isinstance(ctx.kernel, TaylorKernel):
        raise UsageError(f"the truncation study needs a taylor kernel, got '{ctx.kernel.kind}'")
    memory = ctx.config.memory
    T = ctx.time_grid.horizon
    reference_kernel = spec.reference or ctx.kernel
    reference = simulate_convolution(
        reference_kernel, memory.placement, memory.diffusivity, ctx.support,
        ctx.free_control(), ctx.y0, ctx.time_grid, memory.allow_degenerate_diffusion,
    )
    samples = np.linspace(0.0, T, 1001)
    exact_values = eval_kernel(reference_kernel, samples)

    rows: List[Dict[str, float]] = []
    traj = truncated = None
    for order in sorted(spec.orders):
        truncated = truncate(ctx.kernel, order)
        system = build_cascade(
            truncated, memory.placement, memory.diffusivity, ctx.grid, ctx.support, T,
            memory.allow_degenerate_diffusion,
        )
        traj = simulate(system, ctx.free_control(), ctx.y0, ctx.time_grid)
        rows.append({
            "order": order,
            "tail_bound": truncation_bound(ctx.kernel, order, T),
            "kernel_sup_error": float(np.max(np.abs(exact_values - eval_kernel(truncated, samples)))),
            "trajectory_deviation": relative_deviation(traj.field("y"), reference.field("y")),
        })
        logger.info(
            f"K={order}: kernel error {rows[-1]['kernel_sup_error']:.3e} "
            f"(bound {rows[-1]['tail_bound']:.3e}), trajectory deviation {rows[-1]['trajectory_deviation']:.3e}"
        )

    # the reported quadrature uses the kernel the last trajectory was simulated with
    results = _terminal_report(ctx, traj, truncated)
    deviations = [r["trajectory_deviation"] for r in rows]
    results.update({
        "reference_kernel": describe_kernel(reference_kernel),
        "rows": rows,
        "monotone": bool(all(b <= a for a, b in zip(deviations, deviations[1:]))),
        "residual_z1": norm(traj.terminal("z1")),
        "energy": 0.0,
        "iterations": 0,
        "converged": True,
        "slope": None,
    })
    return TaskOutcome(results=results, trajectory=traj, truncation_rows=rows)
