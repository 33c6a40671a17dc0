import copy
import json
import math

import numpy as np
import pytest
from prometheus_client import REGISTRY
from pydantic import ValidationError

from memheat.core.engine import ExperimentEngine, load_config
from memheat.core.errors import ConfigurationError, InsufficientDataError, UsageError
from memheat.core.persistence import ResultStore
from memheat.core.schema import ExperimentConfig
from memheat.core.telemetry import tracer
from memheat.tasks.registry import registry


def exp_minus_t_coeffs(n_terms):
    return [(-1) ** j / math.factorial(j) for j in range(n_terms)]


def test_registry_lists_every_task():
    assert set(registry.names()) == {"simulate", "control", "sweep", "truncation"}
    described = {t["name"]: t for t in registry.list_tasks()}
    assert "epsilons" in described["sweep"]["parameters"]["properties"]


def test_schema_rejects_unknown_fields(base_config):
    broken = copy.deepcopy(base_config)
    broken["domain"]["nodes"] = 10
    with pytest.raises(ValidationError) as info:
        ExperimentConfig.model_validate(broken)
    assert ("domain", "nodes") in [e["loc"] for e in info.value.errors()]


def test_schema_names_bad_breakpoint(base_config):
    broken = copy.deepcopy(base_config)
    broken["support"]["breakpoints"] = [{"t": 0.0, "left": -0.1, "right": 0.3}]
    with pytest.raises(ValidationError, match="breakpoint 0"):
        ExperimentConfig.model_validate(broken)


def test_sweep_epsilons_must_decrease(sweep_config):
    sweep_config["task"]["epsilons"] = [1e-3, 1e-2]
    with pytest.raises(ValidationError, match="strictly decreasing"):
        ExperimentConfig.model_validate(sweep_config)


def test_check_reports_geometry(base_config):
    report = ExperimentEngine().check(ExperimentConfig.model_validate(base_config))
    assert report["coverage"] is False
    assert report["split"] is True
    assert report["support_type"] == "static"
    assert report["cascade_order"] == 1
    assert report["uncovered_nodes"]


def test_taylor_kernel_needs_truncation_for_cascade(base_config):
    config = copy.deepcopy(base_config)
    config["memory"]["kernel"] = {"kind": "taylor", "coeffs": exp_minus_t_coeffs(6)}
    with pytest.raises(ConfigurationError, match="truncation_order"):
        ExperimentEngine().check(ExperimentConfig.model_validate(config))

    config["task"] = {"kind": "simulate", "scheme": "convolution"}
    assert ExperimentEngine().check(ExperimentConfig.model_validate(config))["cascade_order"] is None

    config["memory"]["truncation_order"] = 8
    with pytest.raises(InsufficientDataError):
        ExperimentEngine().check(ExperimentConfig.model_validate(config))

    config["memory"]["truncation_order"] = 3
    assert ExperimentEngine().check(ExperimentConfig.model_validate(config))["cascade_order"] == 4


def test_truncation_order_only_for_taylor(base_config):
    config = copy.deepcopy(base_config)
    config["memory"]["truncation_order"] = 2
    with pytest.raises(ConfigurationError):
        ExperimentEngine().check(ExperimentConfig.model_validate(config))


def test_degenerate_diffusion_rejected_before_running(base_config):
    config = copy.deepcopy(base_config)
    config["memory"]["diffusivity"] = 0.0
    with pytest.raises(ConfigurationError):
        ExperimentEngine().check(ExperimentConfig.model_validate(config))
    config["memory"]["allow_degenerate_diffusion"] = True
    ExperimentEngine().check(ExperimentConfig.model_validate(config))


def test_integrated_formulation_needs_unit_kernel(base_config):
    config = copy.deepcopy(base_config)
    config["memory"]["formulation"] = "integrated"
    with pytest.raises(UsageError):
        ExperimentEngine().check(ExperimentConfig.model_validate(config))
    config["memory"]["kernel"] = {"kind": "exp_poly", "coeffs": [1.0]}
    assert ExperimentEngine().check(ExperimentConfig.model_validate(config))["cascade_order"] == 1


def test_schedule_must_span_horizon(base_config):
    config = copy.deepcopy(base_config)
    config["support"]["breakpoints"] = [{"t": 0.0, "left": 0.1, "right": 0.3},
                                        {"t": 0.05, "left": 0.4, "right": 0.6}]
    with pytest.raises(ConfigurationError, match="horizon"):
        ExperimentEngine().check(ExperimentConfig.model_validate(config))


def test_simulate_run_writes_summary_and_trajectory(base_config, output_root):
    result = ExperimentEngine().run(ExperimentConfig.model_validate(base_config))
    assert result.output_dir == output_root / "small-heat"
    summary = json.loads((result.output_dir / "summary.json").read_text())
    assert summary["geometry"]["coverage"] is False
    assert summary["geometry"]["split"] is True
    assert summary["results"]["energy"] == 0.0
    assert summary["artifacts"] == ["trajectory.csv"]
    assert summary["system"]["fingerprint"]
    assert summary["wall_time_seconds"] >= 0

    table = np.loadtxt(result.output_dir / "trajectory.csv", delimiter=",", skiprows=1)
    header = (result.output_dir / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,x,y,z1"
    # stride 10 over 100 steps -> 11 snapshots of 50 nodes
    assert table.shape == (11 * 50, 4)
    final = table[table[:, 0] == table[:, 0].max()]
    exact = np.exp(-np.pi ** 2 * 0.1) * np.sin(np.pi * final[:, 1])
    assert np.max(np.abs(final[:, 2] - exact)) <= 1e-3 * np.max(np.abs(exact))


def test_sweep_run_writes_cost_curve(sweep_config):
    result = ExperimentEngine().run(ExperimentConfig.model_validate(sweep_config))
    lines = (result.output_dir / "cost_curve.csv").read_text().splitlines()
    assert lines[0] == "epsilon,energy,residual_y,residual_z1,iterations,converged"
    curve = np.loadtxt(result.output_dir / "cost_curve.csv", delimiter=",", skiprows=1)
    assert curve.shape == (3, 6)
    assert np.all(np.diff(curve[:, 0]) < 0)
    assert np.all(np.diff(curve[:, 1]) >= -1e-12)
    assert result.summary["results"]["slope"] is not None
    assert len(result.summary["results"]["curve"]) == 3


def test_control_run(sweep_config):
    config = copy.deepcopy(sweep_config)
    config["task"] = {"kind": "control", "epsilon": 1e-2}
    result = ExperimentEngine().run(ExperimentConfig.model_validate(config))
    results = result.summary["results"]
    assert results["converged"]
    assert results["energy"] > 0
    assert set(results["residuals"]) == {"y", "z1"}


def test_truncation_study_converges(base_config):
    config = copy.deepcopy(base_config)
    config.update({
        "name": "truncation",
        "domain": {"length": 1.0, "n_interior": 30},
        "time": {"horizon": 1.0, "n_steps": 200},
        "memory": {"kernel": {"kind": "taylor", "coeffs": exp_minus_t_coeffs(12)}},
        "task": {"kind": "truncation", "orders": [2, 4, 8],
                 "reference": {"kind": "exp_poly", "rate": -1.0, "coeffs": [1.0]}},
    })
    result = ExperimentEngine().run(ExperimentConfig.model_validate(config))
    rows = result.summary["results"]["rows"]
    deviations = [r["trajectory_deviation"] for r in rows]
    assert [r["order"] for r in rows] == [2, 4, 8]
    assert deviations[0] > deviations[1] > deviations[2]
    assert deviations[2] <= 1e-3
    assert result.summary["results"]["monotone"] is True
    assert all(r["kernel_sup_error"] <= r["tail_bound"] * (1 + 1e-9) for r in rows)
    assert (result.output_dir / "truncation.csv").exists()


def test_truncation_quadrature_uses_truncated_kernel(base_config):
    config = copy.deepcopy(base_config)
    config.update({
        "domain": {"length": 1.0, "n_interior": 30},
        "time": {"horizon": 1.0, "n_steps": 200},
        "memory": {"kernel": {"kind": "taylor", "coeffs": exp_minus_t_coeffs(12)}},
        "task": {"kind": "truncation", "orders": [2]},
    })
    results = ExperimentEngine().run(ExperimentConfig.model_validate(config)).summary["results"]
    # 1 - t + t²/2 and e^{-t} differ by 0.13 at t = 1, far above the quadrature error
    assert results["memory_quadrature_residual"] == pytest.approx(results["residual_z1"], rel=2e-2)


def test_forced_task_needs_matching_block(base_config):
    with pytest.raises(UsageError, match="sweep"):
        ExperimentEngine().run(ExperimentConfig.model_validate(base_config), "sweep")


def test_any_config_can_be_simulated(sweep_config):
    result = ExperimentEngine().run(ExperimentConfig.model_validate(sweep_config), "simulate")
    assert result.summary["task"] == "simulate"
    assert result.summary["artifacts"] == ["trajectory.csv"]


def test_load_config_accepts_summary(base_config, write_config):
    path = write_config(base_config)
    config = load_config(path)
    result = ExperimentEngine().run(config)
    again = load_config(result.output_dir / "summary.json")
    assert again == config


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(bad)


def test_result_store_skips_foreign_summaries(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "summary.json").write_text("{}")
    (tmp_path / "b").mkdir()
    (tmp_path / "b" / "summary.json").write_text("garbage")
    paths = ResultStore.list_summaries(tmp_path)
    assert len(paths) == 2
    assert all(ResultStore.load_summary(p) is None for p in paths)


def test_runs_release_their_traces(base_config):
    engine = ExperimentEngine()
    engine.run(ExperimentConfig.model_validate(base_config))
    with pytest.raises(UsageError):
        engine.run(ExperimentConfig.model_validate(base_config), "sweep")
    assert not [t for t in tracer.active_traces.values() if t.step_name.startswith("small-heat:")]


def test_simulation_metrics_are_recorded(base_config):
    def sample(name):
        return REGISTRY.get_sample_value(name, {"operation": "simulate"}) or 0.0

    before = sample("memheat_operation_success_total"), sample("memheat_operation_seconds_count")
    ExperimentEngine().run(ExperimentConfig.model_validate(base_config))
    assert sample("memheat_operation_success_total") == before[0] + 1
    assert sample("memheat_operation_seconds_count") == before[1] + 1
    assert REGISTRY.get_sample_value("memheat_simulation_seconds_count", {"scheme": "cascade"}) is None
