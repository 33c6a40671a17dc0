"""
control.py — Penalized null control toward y(T) = 0 and ∫_0^T M(T-s) L y(s) ds = 0.

    J_ε(u) = ½ Σ_n τ_n ‖w_n ⊙ u_n‖² + (1/2ε) Σ_{targets} ‖X_target(T)‖²

τ are trapezoidal time weights and ‖·‖ the discrete L² norm. Gradients are exact for
this discrete functional (adjoint of the Crank–Nicolson scheme) and are returned as
Riesz representers in the same weighted product, see `control_inner`.
"""
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from memheat.core.errors import UsageError
from memheat.core.observability import CG_ITERATIONS, CG_NONCONVERGED, track_operation
from memheat.lab.geometry import Field
from memheat.lab.reduction import CoupledSystem
from memheat.lab.simulator import ControlField, CrankNicolsonStepper, TimeGrid
from memheat.utils.logger import logger


class ControlProblem(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    system: CoupledSystem
    y0: Field
    time_grid: TimeGrid
    epsilon: float
    penalize_all_cascade: bool = False

    @field_validator("epsilon")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"penalty ε must be positive, got {v}")
        return v

    @property
    def target_blocks(self):
        return self.system.target_blocks(self.penalize_all_cascade)

    @property
    def target_names(self) -> List[str]:
        return [self.system.field_names[b] for b in self.target_blocks]


class PenalizedSolution(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    control: ControlField
    epsilon: float
    cost: float
    energy: float
    residuals: Dict[str, float]
    residual_y: float
    residual_z1: float
    iterations: int
    gradient_norm: float
    converged: bool
    cost_history: List[float]


class SweepPoint(BaseModel):
    epsilon: float
    energy: float
    residual_y: float
    residual_z1: float
    iterations: int
    converged: bool
    cost: float


class SweepResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    points: List[SweepPoint]
    slope: Optional[float]
    growth_ratio: Optional[float]
    final_control: Optional[ControlField] = None


def control_inner(tg: TimeGrid, h: float, a: np.ndarray, b: np.ndarray) -> float:
    """Σ_n τ_n h Σ_i a_{n,i} b_{n,i}: discrete L²(0,T; L²(Ω))."""
    return float(h * np.sum(tg.trapezoid_weights()[:, None] * a * b))


class PenalizedFunctional:
    """Forward/adjoint evaluation of J_ε sharing one factorized step operator."""

    def __init__(self, problem: ControlProblem):
        self.problem = problem
        self.system = problem.system
        self.tg = problem.time_grid
        self.h = self.system.grid.h
        self.eps = problem.epsilon
        self.targets = problem.target_blocks
        self.stepper = CrankNicolsonStepper(self.system, self.tg)
        self.weights = self.stepper.weights
        self.tau = self.tg.trapezoid_weights()
        self.x0 = self.system.initial_state(problem.y0)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return control_inner(self.tg, self.h, a, b)

    def terminal(self, u: np.ndarray, homogeneous: bool = False) -> np.ndarray:
        x0 = np.zeros_like(self.x0) if homogeneous else self.x0
        return self.stepper.run(u, x0, store=False)

    def energy(self, u: np.ndarray) -> float:
        wu = self.weights * u
        return 0.5 * self.inner(wu, wu)

    def residuals(self, terminal: np.ndarray) -> Dict[str, float]:
        names = self.system.field_names
        return {names[b]: float(np.sqrt(self.h * terminal[b] @ terminal[b])) for b in self.targets}

    def penalty(self, terminal: np.ndarray) -> float:
        return sum(r * r for r in self.residuals(terminal).values()) / (2.0 * self.eps)

    def value(self, u: np.ndarray) -> float:
        return self.energy(u) + self.penalty(self.terminal(u))

    def gradient(self, u: np.ndarray, homogeneous: bool = False) -> np.ndarray:
        """Riesz gradient; with homogeneous=True (y0 = 0) this is the Hessian action H u."""
        terminal = self.terminal(u, homogeneous)
        seed = np.zeros_like(terminal)
        for b in self.targets:
            seed[b] = (self.h / self.eps) * terminal[b]
        dphi_du = self.stepper.control_sensitivity(self.stepper.adjoint(seed))
        return self.weights ** 2 * u + dphi_du / (self.tau[:, None] * self.h)


def _as_array(problem: ControlProblem, u: Union[ControlField, np.ndarray]) -> np.ndarray:
    if isinstance(u, ControlField):
        if u.time_grid != problem.time_grid or u.grid != problem.system.grid:
            raise UsageError("control is not defined on the problem's grids")
        return np.array(u.values)
    arr = np.array(u, dtype=float)
    expected = (problem.time_grid.n_steps + 1, problem.system.grid.n_interior)
    if arr.shape != expected:
        raise UsageError(f"control shape {arr.shape} != {expected}")
    return arr


def _wrap(problem: ControlProblem, values: np.ndarray) -> ControlField:
    return ControlField(time_grid=problem.time_grid, grid=problem.system.grid, values=values)


def objective(p: ControlProblem, u: Union[ControlField, np.ndarray]) -> float:
    return PenalizedFunctional(p).value(_as_array(p, u))


def gradient(p: ControlProblem, u: Union[ControlField, np.ndarray]) -> ControlField:
    return _wrap(p, PenalizedFunctional(p).gradient(_as_array(p, u)))


@track_operation("solve_penalized")
def solve_penalized(
    p: ControlProblem,
    tol: float,
    max_iter: int,
    initial: Optional[Union[ControlField, np.ndarray]] = None,
) -> PenalizedSolution:
    """
    Conjugate gradient on the quadratic J_ε. Stops when ‖∇J‖ ≤ tol·‖∇J(0)‖ or after max_iter
    iterations; running out of iterations is reported through `converged`, not raised.
    """
    if not tol > 0:
        raise UsageError(f"tol must be positive, got {tol}")
    functional = PenalizedFunctional(p)
    zero = np.zeros((p.time_grid.n_steps + 1, p.system.grid.n_interior))
    u = zero.copy() if initial is None else _as_array(p, initial)

    # tolerance is relative to ‖∇J(0)‖ for cold and warm starts alike
    g_zero = functional.gradient(zero)
    g_ref = np.sqrt(functional.inner(g_zero, g_zero))
    r = -(g_zero if initial is None else functional.gradient(u))
    direction = r.copy()
    rr = functional.inner(r, r)
    cost = functional.value(u)
    history = [cost]
    threshold = tol * g_ref

    iterations = 0
    while np.sqrt(rr) > threshold and iterations < max_iter:
        Hd = functional.gradient(direction, homogeneous=True)
        curvature = functional.inner(direction, Hd)
        if curvature <= 0:
            logger.warning(f"[CG] non-positive curvature {curvature:.3e} at iteration {iterations}; stopping")
            break
        alpha = rr / curvature
        u += alpha * direction
        r -= alpha * Hd
        cost -= 0.5 * rr * rr / curvature
        history.append(cost)
        rr_next = functional.inner(r, r)
        direction = r + (rr_next / rr) * direction
        rr = rr_next
        iterations += 1
        logger.debug(f"[CG] iter {iterations}: J={cost:.6e} |r|={np.sqrt(rr):.3e}")

    u = np.where(functional.weights > 0, u, 0.0)
    terminal = functional.terminal(u)
    residuals = functional.residuals(terminal)
    energy = functional.energy(u)
    grad_exit = functional.gradient(u)
    grad_norm = float(np.sqrt(functional.inner(grad_exit, grad_exit)))
    converged = bool(np.sqrt(rr) <= threshold)

    CG_ITERATIONS.observe(iterations)
    if not converged:
        CG_NONCONVERGED.inc()
        logger.warning(
            f"[CG] ε={p.epsilon:.1e}: stopped after {iterations} iterations with |∇J|={grad_norm:.3e} "
            f"(target {threshold:.3e})"
        )
    else:
        logger.info(f"[CG] ε={p.epsilon:.1e}: converged in {iterations} iterations, energy={energy:.4e}")

    names = p.system.field_names
    return PenalizedSolution(
        control=_wrap(p, u),
        epsilon=p.epsilon,
        cost=energy + sum(v * v for v in residuals.values()) / (2.0 * p.epsilon),
        energy=energy,
        residuals=residuals,
        residual_y=residuals["y"],
        residual_z1=residuals[names[p.system.memory_block]],
        iterations=iterations,
        gradient_norm=grad_norm,
        converged=converged,
        cost_history=history,
    )


def epsilon_sweep(
    template: ControlProblem,
    epsilons: Sequence[float],
    tol: float,
    max_iter: int,
) -> SweepResult:
    """Solve for each ε (strictly decreasing), warm-starting from the previous control."""
    eps = [float(e) for e in epsilons]
    if not eps or any(e <= 0 for e in eps):
        raise UsageError(f"ε list must be non-empty and positive, got {eps}")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise UsageError(f"ε list must be strictly decreasing, got {eps}")

    points: List[SweepPoint] = []
    previous: Optional[ControlField] = None
    for e in eps:
        solution = solve_penalized(template.model_copy(update={"epsilon": e}), tol, max_iter, initial=previous)
        previous = solution.control
        points.append(SweepPoint(
            epsilon=e, energy=solution.energy, residual_y=solution.residual_y,
            residual_z1=solution.residual_z1, iterations=solution.iterations,
            converged=solution.converged, cost=solution.cost,
        ))

    slope, ratio = _growth_indicators(points)
    if slope is not None:
        logger.info(f"ε-sweep: d log(energy) / d log(ε) = {slope:.3f}, energy ratio last/first = {ratio:.3g}")
    return SweepResult(points=points, slope=slope, growth_ratio=ratio, final_control=previous)


def _growth_indicators(points: List[SweepPoint]):
    usable = [pt for pt in points if pt.energy > 0]
    if len(usable) < 2:
        return None, None
    log_eps = np.log([pt.epsilon for pt in usable])
    log_energy = np.log([pt.energy for pt in usable])
    slope = float(np.polyfit(log_eps, log_energy, 1)[0])
    return slope, float(usable[-1].energy / usable[0].energy)
