"""
engine.py — ExperimentEngine: validate a config, build the lab objects, run a task, persist artifacts.
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict

from memheat.core.config import settings
from memheat.core.errors import ConfigurationError, UsageError
from memheat.core.observability import RUNS_TOTAL
from memheat.core.persistence import ResultStore
from memheat.core.schema import ExperimentConfig, SimulateTask
from memheat.core.telemetry import tracer
from memheat.lab.geometry import build_grid, norm
from memheat.lab.kernels import TaylorKernel, describe_kernel, truncate
from memheat.lab.reduction import build_cascade, build_integrated_transform, validate_diffusivity
from memheat.lab.simulator import TimeGrid
from memheat.lab.support import check_coverage, check_split
from memheat.tasks.experiments import ExperimentContext  # importing registers the tasks
from memheat.tasks.registry import registry
from memheat.utils.logger import logger


class RunResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    output_dir: Path
    summary: Dict[str, Any]


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Reads a config file, or the config echoed inside a summary.json."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config {path} is not valid JSON: {e}") from e
    if isinstance(raw, dict) and "config" in raw and "results" in raw:
        logger.info(f"Re-running the config echoed in summary {path}")
        raw = raw["config"]
    return ExperimentConfig.model_validate(raw)


class ExperimentEngine:
    """Runs one experiment per config; safe to share across threads (no mutable state)."""

    def __init__(self, output_root: Optional[Path] = None):
        self.output_root = output_root

    # ── validation ────────────────────────────────────────────────────────────

    def _needs_cascade(self, config: ExperimentConfig, task_kind: str) -> bool:
        if task_kind == "truncation":
            return False
        return not (task_kind == "simulate" and isinstance(config.task, SimulateTask)
                    and config.task.scheme == "convolution")

    def build(self, config: ExperimentConfig, task_kind: Optional[str] = None) -> ExperimentContext:
        """All module preconditions are checked here, before any time stepping."""
        task_kind = task_kind or config.task.kind
        memory = config.memory
        grid = build_grid(config.domain.length, config.domain.n_interior)
        time_grid = TimeGrid(horizon=config.time.horizon, n_steps=config.time.n_steps)
        support = config.moving_support()
        support.require_horizon(time_grid.horizon)
        validate_diffusivity(memory.placement, memory.diffusivity, memory.allow_degenerate_diffusion)

        kernel = memory.kernel
        effective = kernel
        if isinstance(kernel, TaylorKernel):
            effective = truncate(kernel, memory.truncation_order) if memory.truncation_order is not None else None
        elif memory.truncation_order is not None:
            raise ConfigurationError(
                f"memory.truncation_order applies to taylor kernels only, got '{kernel.kind}'"
            )

        system = None
        if effective is not None:
            if memory.formulation == "integrated":
                system = build_integrated_transform(
                    grid, support, time_grid.horizon, b=memory.diffusivity, kernel=effective,
                )
            else:
                system = build_cascade(
                    effective, memory.placement, memory.diffusivity, grid, support,
                    time_grid.horizon, memory.allow_degenerate_diffusion,
                )
        elif self._needs_cascade(config, task_kind):
            raise ConfigurationError(
                "taylor kernels need memory.truncation_order for cascade-based tasks"
            )

        return ExperimentContext(
            config=config,
            grid=grid,
            time_grid=time_grid,
            support=support,
            kernel=kernel,
            effective_kernel=effective,
            system=system,
            y0=config.initial.sample(grid),
            tol=config.solver.tol or settings.CG_TOL,
            max_iter=config.solver.max_iter or settings.CG_MAX_ITER,
        )

    def geometry(self, ctx: ExperimentContext) -> Dict[str, Any]:
        coverage = check_coverage(ctx.support, ctx.grid, ctx.time_grid.times)
        return {
            "coverage": coverage.covered,
            "uncovered_nodes": coverage.uncovered_nodes,
            "split": check_split(ctx.support, ctx.grid, ctx.time_grid.times),
            "support_type": "static" if ctx.support.is_static else "moving",
        }

    def check(self, config: ExperimentConfig, task_kind: Optional[str] = None) -> Dict[str, Any]:
        ctx = self.build(config, task_kind)
        report = self.geometry(ctx)
        report["task"] = task_kind or config.task.kind
        report["kernel"] = describe_kernel(ctx.kernel)
        report["cascade_order"] = ctx.system.order if ctx.system is not None else None
        return report

    # ── execution ─────────────────────────────────────────────────────────────

    def output_dir(self, config: ExperimentConfig) -> Path:
        if self.output_root is not None and not (config.output.directory and Path(config.output.directory).is_absolute()):
            return Path(self.output_root) / (config.output.directory or config.name)
        return settings.resolve_output(config.output.directory, config.name)

    def run(self, config: ExperimentConfig, task_kind: Optional[str] = None) -> RunResult:
        task_kind = task_kind or config.task.kind
        task = registry.get_task(task_kind)
        if task is None:
            raise UsageError(f"unknown task '{task_kind}' (available: {registry.names()})")
        # simulate needs no parameters, so any config can be forced into it
        spec = SimulateTask() if task_kind == "simulate" and config.task.kind != "simulate" else config.task

        trace = tracer.start_trace(f"{config.name}:{task_kind}")
        try:
            ctx = self.build(config, task_kind)
            geometry = self.geometry(ctx)
            logger.info(
                f"Running '{config.name}' ({task_kind}): M={describe_kernel(ctx.kernel)}, "
                f"support {geometry['support_type']}, coverage={geometry['coverage']}, split={geometry['split']}"
            )
            outcome = task.execute(ctx, spec)

            store = ResultStore(self.output_dir(config))
            artifacts = []
            stride = config.output.stride or settings.CSV_STRIDE
            if outcome.trajectory is not None:
                artifacts.append(store.write_trajectory(outcome.trajectory, stride).name)
            if outcome.sweep is not None:
                artifacts.append(store.write_cost_curve(outcome.sweep).name)
            if outcome.truncation_rows is not None:
                artifacts.append(store.write_truncation_study(outcome.truncation_rows).name)
        except Exception:
            trace.finish(status="failed")
            RUNS_TOTAL.labels(task=task_kind, status="failed").inc()
            raise

        wall_time = trace.finish(metadata={"output": str(store.directory)})
        summary = {
            "name": config.name,
            "task": task_kind,
            "config": config.model_dump(mode="json"),
            "settings": settings.summary(),
            "kernel": describe_kernel(ctx.kernel),
            "geometry": geometry,
            "system": (
                {**ctx.system.describe(), "fingerprint": ctx.system.fingerprint()}
                if ctx.system is not None else None
            ),
            "initial_norm": norm(ctx.y0),
            "results": outcome.results,
            "artifacts": artifacts,
            "wall_time_seconds": wall_time,
        }
        store.save_summary(summary)
        RUNS_TOTAL.labels(task=task_kind, status="success").inc()
        return RunResult(output_dir=store.directory, summary=summary)
