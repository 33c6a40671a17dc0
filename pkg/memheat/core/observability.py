from prometheus_client import Counter, Histogram, start_http_server
import time
from functools import wraps
from typing import Callable
from memheat.utils.logger import logger

# === Operation Metrics ===
OPERATION_SUCCESS = Counter("memheat_operation_success_total", "Completed lab operations", ["operation"])
OPERATION_FAILURE = Counter("memheat_operation_failure_total", "Failed lab operations", ["operation"])
OPERATION_LATENCY = Histogram("memheat_operation_seconds", "Latency of lab operations in seconds", ["operation"])

# === Solver Metrics ===
SIMULATIONS_TOTAL = Counter("memheat_simulations_total", "Time integrations performed", ["scheme"])
CG_ITERATIONS = Histogram(
    "memheat_cg_iterations",
    "Conjugate-gradient iterations per penalized solve",
    buckets=[1, 5, 10, 25, 50, 100, 250, 500, 1000]
)
CG_NONCONVERGED = Counter("memheat_cg_nonconverged_total", "Penalized solves stopped at max_iter")
RUNS_TOTAL = Counter("memheat_runs_total", "Experiment runs by task and outcome", ["task", "status"])


def start_metrics_server(port: int):
    start_http_server(port)
    logger.info(f"Prometheus metrics server started on port {port}")


def track_operation(operation: str):
    """Decorator to track success/failure counts and latency of a lab operation."""
    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                OPERATION_SUCCESS.labels(operation=operation).inc()
                return result
            except Exception:
                OPERATION_FAILURE.labels(operation=operation).inc()
                raise
            finally:
                OPERATION_LATENCY.labels(operation=operation).observe(time.perf_counter() - start_time)
        return wrapper
    return decorator
