"""
persistence.py — Run artifacts on disk: summary.json plus fixed-column CSV files.
Floats are written with 17 significant digits (%.17g), which is locale-independent.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from memheat.utils.logger import logger

SUMMARY_FILE = "summary.json"
TRAJECTORY_FILE = "trajectory.csv"
COST_CURVE_FILE = "cost_curve.csv"
TRUNCATION_FILE = "truncation.csv"
FLOAT_FORMAT = "%.17g"


class ResultStore:
    """One output directory per experiment run."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        logger.debug(f"[ResultStore] Writing to {self.directory}")

    def _write_table(self, filename: str, header: Sequence[str], rows: np.ndarray, fmt=FLOAT_FORMAT) -> Path:
        path = self.directory / filename
        np.savetxt(path, rows, fmt=fmt, delimiter=",", header=",".join(header), comments="")
        logger.info(f"[ResultStore] Wrote {path} ({rows.shape[0]} rows)")
        return path

    def save_summary(self, summary: Dict[str, Any]) -> Path:
        path = self.directory / SUMMARY_FILE
        path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
        logger.info(f"[ResultStore] Saved summary {path}")
        return path

    def write_trajectory(self, traj, stride: int) -> Path:
        """Rows (t, x, fields...) for every stride-th time node and always the terminal one."""
        N = traj.time_grid.n_steps
        selected = list(range(0, N + 1, stride))
        if selected[-1] != N:
            selected.append(N)
        times = traj.time_grid.times[selected]
        x = traj.grid.nodes
        n = x.size
        columns = [np.repeat(times, n), np.tile(x, len(selected))]
        columns += [traj.states[selected, k, :].reshape(-1) for k in range(len(traj.field_names))]
        return self._write_table(TRAJECTORY_FILE, ["t", "x", *traj.field_names], np.column_stack(columns))

    def write_cost_curve(self, sweep) -> Path:
        header = ["epsilon", "energy", "residual_y", "residual_z1", "iterations", "converged"]
        rows = np.array([
            [p.epsilon, p.energy, p.residual_y, p.residual_z1, p.iterations, int(p.converged)]
            for p in sweep.points
        ])
        fmt = [FLOAT_FORMAT] * 4 + ["%d", "%d"]
        return self._write_table(COST_CURVE_FILE, header, rows, fmt=fmt)

    def write_truncation_study(self, rows: List[Dict[str, float]]) -> Path:
        header = ["order", "tail_bound", "kernel_sup_error", "trajectory_deviation"]
        table = np.array([[r[h] for h in header] for r in rows])
        fmt = ["%d"] + [FLOAT_FORMAT] * 3
        return self._write_table(TRUNCATION_FILE, header, table, fmt=fmt)

    @staticmethod
    def load_summary(path: Path) -> Optional[Dict[str, Any]]:
        """Parsed summary, or None when the file is missing or not a summary."""
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"[ResultStore] Skipping unreadable summary {path}: {e}")
            return None
        if not isinstance(data, dict) or "geometry" not in data or "results" not in data:
            logger.warning(f"[ResultStore] Skipping {path}: not a run summary")
            return None
        return data

    @staticmethod
    def list_summaries(root: Path) -> List[Path]:
        root = Path(root)
        if not root.is_dir():
            return []
        return sorted(p for p in root.rglob(SUMMARY_FILE) if p.is_file())
