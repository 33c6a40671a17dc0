"""
config.py — Centralized lab defaults.
All values can be overridden via environment variables (or a local .env file).
"""
import os
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv

load_dotenv()


class LabSettings:
    """
    Process-wide defaults, loaded from environment with sensible fallbacks.

    Experiment configs always win over these; they only fill gaps:
        MEMHEAT_OUTPUT_ROOT=./runs       where relative output dirs are resolved
        MEMHEAT_CSV_STRIDE=10            trajectory export stride
        MEMHEAT_CG_TOL=1e-8              relative gradient tolerance
        MEMHEAT_CG_MAX_ITER=500
    """

    # === Output ===============================================================
    OUTPUT_ROOT: str = os.getenv("MEMHEAT_OUTPUT_ROOT", "./runs")
    # Every stride-th time node is exported; the terminal snapshot always is
    CSV_STRIDE: int = int(os.getenv("MEMHEAT_CSV_STRIDE", "10"))

    # === Solver ===============================================================
    CG_TOL: float = float(os.getenv("MEMHEAT_CG_TOL", "1e-8"))
    CG_MAX_ITER: int = int(os.getenv("MEMHEAT_CG_MAX_ITER", "500"))

    # === Execution ============================================================
    BATCH_WORKERS: int = int(os.getenv("MEMHEAT_BATCH_WORKERS", "4"))
    PROMETHEUS_PORT: Optional[int] = (
        int(os.environ["MEMHEAT_PROMETHEUS_PORT"])
        if os.getenv("MEMHEAT_PROMETHEUS_PORT") else None
    )

    @classmethod
    def output_root(cls) -> Path:
        """Re-read on every call so tests and batch runs can redirect it."""
        return Path(os.getenv("MEMHEAT_OUTPUT_ROOT", cls.OUTPUT_ROOT))

    @classmethod
    def resolve_output(cls, directory: Optional[str], fallback_name: str) -> Path:
        """Absolute dirs are kept; relative or missing ones go under the output root."""
        if directory and Path(directory).is_absolute():
            return Path(directory)
        return cls.output_root() / (directory or fallback_name)

    @classmethod
    def summary(cls) -> Dict:
        """Effective settings, echoed into every run summary."""
        return {
            "output_root": str(cls.output_root()),
            "csv_stride": cls.CSV_STRIDE,
            "cg_tol": cls.CG_TOL,
            "cg_max_iter": cls.CG_MAX_ITER,
            "batch_workers": cls.BATCH_WORKERS,
        }


settings = LabSettings()
