import json

import numpy as np
import pytest

from memheat.lab.geometry import build_grid
from memheat.lab.kernels import ExpPolyKernel
from memheat.lab.reduction import MemoryPlacement, build_cascade
from memheat.lab.simulator import TimeGrid
from memheat.lab.support import MovingSupport


@pytest.fixture(autouse=True)
def output_root(tmp_path, monkeypatch):
    """Every run in the test session writes below its own temporary directory."""
    root = tmp_path / "runs"
    monkeypatch.setenv("MEMHEAT_OUTPUT_ROOT", str(root))
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_grid():
    return build_grid(1.0, 20)


@pytest.fixture
def sweeping_support():
    # covers every node of a 20-node grid and keeps both boundary components
    return MovingSupport.from_tuples(1.0, [(0.0, 0.03, 0.33), (0.2, 0.67, 0.97)])


@pytest.fixture
def small_time_grid():
    return TimeGrid(horizon=0.2, n_steps=40)


@pytest.fixture
def linear_memory_system(small_grid, sweeping_support):
    """M = 1 + t acting on the state, b = 1."""
    return build_cascade(
        ExpPolyKernel(rate=0.0, coeffs=[1.0, 1.0]), MemoryPlacement.ON_STATE, 1.0,
        small_grid, sweeping_support, 0.2,
    )


@pytest.fixture
def write_config(tmp_path):
    """Dumps a config dict to a JSON file and returns its path."""
    def _write(config: dict, name: str = "config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(config))
        return path
    return _write


@pytest.fixture
def base_config():
    return {
        "name": "small-heat",
        "domain": {"length": 1.0, "n_interior": 50},
        "time": {"horizon": 0.1, "n_steps": 100},
        "memory": {"kernel": {"kind": "zero"}},
        "support": {"breakpoints": [{"t": 0.0, "left": 0.3, "right": 0.6}]},
        "initial": {"profile": "eigenmode", "mode": 1},
        "task": {"kind": "simulate"},
        "output": {"stride": 10},
    }


@pytest.fixture
def sweep_config():
    return {
        "name": "tiny-sweep",
        "domain": {"length": 1.0, "n_interior": 10},
        "time": {"horizon": 0.2, "n_steps": 20},
        "memory": {"kernel": {"kind": "exp_poly", "rate": 0.0, "coeffs": [1.0, 1.0]},
                   "placement": "on_state"},
        "support": {"breakpoints": [{"t": 0.0, "left": 0.05, "right": 0.4},
                                    {"t": 0.2, "left": 0.6, "right": 0.95}]},
        "initial": {"profile": "eigenmode", "mode": 1},
        "task": {"kind": "sweep", "epsilons": [1e-1, 1e-2, 1e-3]},
        "solver": {"tol": 1e-10, "max_iter": 400},
    }
