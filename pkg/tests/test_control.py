import numpy as np
import pytest
from pydantic import ValidationError

from memheat.core.errors import UsageError
from memheat.lab.control import (
    ControlProblem, control_inner, epsilon_sweep, gradient, objective, solve_penalized,
)
from memheat.lab.geometry import Field, build_grid, norm
from memheat.lab.kernels import ExpPolyKernel, ZeroKernel
from memheat.lab.reduction import MemoryPlacement, build_cascade, memory_integral, memory_residual
from memheat.lab.simulator import ControlField, TimeGrid, simulate
from memheat.lab.support import MovingSupport, check_coverage, check_split


@pytest.fixture
def problem(linear_memory_system, small_time_grid):
    y0 = linear_memory_system.grid.sample(lambda x: np.sin(np.pi * x))
    return ControlProblem(system=linear_memory_system, y0=y0, time_grid=small_time_grid, epsilon=1e-2)


def random_control(problem, rng):
    shape = (problem.time_grid.n_steps + 1, problem.system.grid.n_interior)
    return ControlField(time_grid=problem.time_grid, grid=problem.system.grid, values=rng.standard_normal(shape))


def test_problem_rejects_nonpositive_epsilon(problem):
    with pytest.raises(ValidationError):
        ControlProblem(system=problem.system, y0=problem.y0, time_grid=problem.time_grid, epsilon=0.0)


def test_default_targets_are_state_and_first_memory(problem):
    assert problem.target_names == ["y", "z1"]
    everything = problem.model_copy(update={"penalize_all_cascade": True})
    assert everything.target_names == ["y", "z1", "z2"]


def test_objective_of_zero_problem_is_zero(problem):
    still = problem.model_copy(update={"y0": problem.system.grid.zeros()})
    zero = ControlField.zeros(problem.time_grid, problem.system.grid)
    assert objective(still, zero) == 0.0
    np.testing.assert_array_equal(gradient(still, zero).values, 0.0)


def test_objective_of_free_evolution_is_pure_penalty(problem):
    zero = ControlField.zeros(problem.time_grid, problem.system.grid)
    traj = simulate(problem.system, zero, problem.y0, problem.time_grid)
    expected = (norm(traj.terminal("y")) ** 2 + norm(traj.terminal("z1")) ** 2) / (2 * problem.epsilon)
    assert objective(problem, zero) == pytest.approx(expected, rel=1e-12)


def test_objective_is_quadratic_without_initial_data(problem, rng):
    still = problem.model_copy(update={"y0": problem.system.grid.zeros()})
    u = random_control(problem, rng)
    doubled = ControlField(time_grid=u.time_grid, grid=u.grid, values=2 * u.values)
    assert objective(still, doubled) == pytest.approx(4 * objective(still, u), rel=1e-12)


def test_gradient_matches_central_differences(rng):
    for trial in range(10):
        n = int(rng.integers(8, 31))
        steps = int(rng.integers(10, 51))
        T = 0.1 + 0.2 * trial / 9
        grid = build_grid(1.0, n)
        support = MovingSupport.from_tuples(1.0, [(0.0, 0.1, 0.45), (T, 0.5, 0.85)])
        placement = list(MemoryPlacement)[trial % 2]
        kernel = ExpPolyKernel(rate=float(rng.uniform(-1, 1)), coeffs=[1.0, float(rng.uniform(0.2, 1.0))])
        system = build_cascade(kernel, placement, 1.0, grid, support, T)
        tg = TimeGrid(horizon=T, n_steps=steps)
        y0 = Field(grid=grid, values=rng.standard_normal(n))
        p = ControlProblem(system=system, y0=y0, time_grid=tg, epsilon=float(10 ** rng.uniform(-3, 0)),
                           penalize_all_cascade=bool(trial % 3 == 0))

        u = rng.standard_normal((steps + 1, n))
        g = gradient(p, u).values
        delta = 1e-3
        for _ in range(10):
            d = rng.standard_normal((steps + 1, n))
            fd = (objective(p, u + delta * d) - objective(p, u - delta * d)) / (2 * delta)
            exact = control_inner(tg, grid.h, g, d)
            assert abs(exact - fd) <= 1e-5 * max(abs(fd), 1e-8)


def test_gradient_vanishes_at_minimizer(problem):
    solution = solve_penalized(problem, tol=1e-10, max_iter=2000)
    zero = ControlField.zeros(problem.time_grid, problem.system.grid)
    g0 = gradient(problem, zero).values
    reference = np.sqrt(control_inner(problem.time_grid, problem.system.grid.h, g0, g0))
    assert solution.converged
    assert solution.gradient_norm <= 1e-6 * reference


def test_cost_decreases_every_iteration(problem):
    costs = [objective(problem, ControlField.zeros(problem.time_grid, problem.system.grid))]
    for max_iter in (1, 2, 3, 4):
        solution = solve_penalized(problem, tol=1e-14, max_iter=max_iter)
        assert solution.iterations == max_iter
        costs.append(solution.cost)
        history = solution.cost_history
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(history, history[1:]))
    assert all(b <= a * (1 + 1e-10) for a, b in zip(costs, costs[1:]))
    assert costs[-1] < costs[0]


def test_cost_identity(problem):
    solution = solve_penalized(problem, tol=1e-8, max_iter=500)
    penalty = (solution.residual_y ** 2 + solution.residual_z1 ** 2) / (2 * problem.epsilon)
    assert solution.cost == pytest.approx(solution.energy + penalty, rel=1e-12)
    assert solution.cost == pytest.approx(objective(problem, solution.control), rel=1e-10)
    assert solution.residual_y >= 0 and solution.residual_z1 >= 0


def test_negligible_penalty_gives_negligible_control(problem):
    solution = solve_penalized(problem.model_copy(update={"epsilon": 1e6}), tol=1e-8, max_iter=500)
    assert solution.energy <= 1e-8


def test_control_is_zero_outside_support(small_grid, small_time_grid):
    support = MovingSupport.static(1.0, 0.3, 0.6)
    system = build_cascade(ExpPolyKernel(coeffs=[1.0, 1.0]), MemoryPlacement.ON_STATE, 1.0,
                           small_grid, support, 0.2)
    p = ControlProblem(system=system, y0=small_grid.sample(lambda x: np.sin(np.pi * x)),
                       time_grid=small_time_grid, epsilon=1e-3)
    solution = solve_penalized(p, tol=1e-8, max_iter=300)
    outside = (small_grid.nodes + small_grid.h / 2 <= 0.3) | (small_grid.nodes - small_grid.h / 2 >= 0.6)
    assert np.all(solution.control.values[:, outside] == 0.0)
    assert np.any(solution.control.values[:, ~outside] != 0.0)


def test_penalized_family_is_monotone(problem):
    sweep = epsilon_sweep(problem, [1e-1, 1e-2, 1e-3, 1e-4], tol=1e-10, max_iter=1500)
    residual = [np.hypot(p.residual_y, p.residual_z1) for p in sweep.points]
    energy = [p.energy for p in sweep.points]
    assert all(b <= a + 1e-10 for a, b in zip(residual, residual[1:]))
    assert all(b >= a - 1e-10 for a, b in zip(energy, energy[1:]))
    assert sweep.slope is not None and sweep.slope < 0
    assert sweep.growth_ratio == pytest.approx(energy[-1] / energy[0])


def test_memory_target_matches_direct_quadrature(problem):
    solution = solve_penalized(problem, tol=1e-10, max_iter=2000)
    traj = simulate(problem.system, solution.control, problem.y0, problem.time_grid)
    T = problem.time_grid.horizon
    cascade_z1 = traj.terminal("z1")
    assert solution.residual_z1 == pytest.approx(norm(cascade_z1), rel=1e-10, abs=1e-14)

    kernel, placement = problem.system.kernel, problem.system.placement
    quadrature = memory_integral(traj, kernel, placement, T)
    dt = problem.time_grid.dt
    assert norm(quadrature - cascade_z1) <= 10 * dt ** 2 * np.max(np.abs(traj.field("y")))
    assert memory_residual(traj, kernel, placement, T) == pytest.approx(norm(quadrature))


def test_sweep_requires_decreasing_epsilons(problem):
    with pytest.raises(UsageError):
        epsilon_sweep(problem, [1e-2, 1e-1], tol=1e-8, max_iter=10)
    with pytest.raises(UsageError):
        epsilon_sweep(problem, [1e-2, 1e-2], tol=1e-8, max_iter=10)
    with pytest.raises(UsageError):
        epsilon_sweep(problem, [], tol=1e-8, max_iter=10)


def test_sweep_warm_start_reaches_same_minimizer(problem):
    sweep = epsilon_sweep(problem, [1e-1, 1e-2], tol=1e-11, max_iter=2000)
    cold = solve_penalized(problem.model_copy(update={"epsilon": 1e-2}), tol=1e-11, max_iter=2000)
    assert sweep.points[-1].energy == pytest.approx(cold.energy, rel=1e-6)


def _bump(x):
    # starts inside the moving support and outside the static one
    return np.exp(-((x - 0.15) / 0.05) ** 2)


def _sweep(kernel, support, epsilons):
    grid = build_grid(1.0, 30)
    T = 1.0
    tg = TimeGrid(horizon=T, n_steps=100)
    system = build_cascade(kernel, MemoryPlacement.ON_STATE, 1.0, grid, support, T)
    template = ControlProblem(system=system, y0=grid.sample(_bump), time_grid=tg, epsilon=epsilons[0])
    return epsilon_sweep(template, epsilons, tol=1e-10, max_iter=4000), system


@pytest.mark.slow
def test_moving_support_flattens_memory_cost_curve():
    epsilons = [1e-2, 1e-3, 1e-4, 1e-5]
    memory = ExpPolyKernel(rate=0.0, coeffs=[1.0, 1.0])
    static = MovingSupport.static(1.0, 0.3, 0.6)
    moving = MovingSupport.from_tuples(1.0, [(0.0, 0.02, 0.27), (1.0, 0.73, 0.98)])

    heat, _ = _sweep(ZeroKernel(), static, epsilons)
    fixed, _ = _sweep(memory, static, epsilons)
    swept, system = _sweep(memory, moving, epsilons)

    times = np.linspace(0.0, 1.0, 101)
    assert check_coverage(moving, system.grid, times).covered and check_split(moving, system.grid, times)
    assert not check_coverage(static, system.grid, times).covered

    fixed_energy = [p.energy for p in fixed.points]
    assert all(b >= a * (1 - 1e-10) for a, b in zip(fixed_energy, fixed_energy[1:]))
    assert heat.growth_ratio <= 10
    assert fixed.growth_ratio >= 5 * swept.growth_ratio, (heat.growth_ratio, fixed.growth_ratio, swept.growth_ratio)

    at_1e4 = swept.points[2]
    assert at_1e4.residual_y / norm(system.grid.sample(_bump)) <= 0.05
