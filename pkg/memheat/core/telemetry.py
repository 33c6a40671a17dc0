import time
import uuid
from typing import Any, Callable, Dict, Optional
from memheat.utils.logger import logger


class Trace:
    """A timed span around one experiment run or one phase of it."""
    def __init__(self, step_name: str, parent_id: Optional[str] = None,
                 on_finish: Optional[Callable[["Trace"], None]] = None):
        self.trace_id = str(uuid.uuid4())
        self.parent_id = parent_id
        self.step_name = step_name
        self.start_time = time.perf_counter()
        self.end_time: Optional[float] = None
        self.metadata: Dict[str, Any] = {}
        self.status: str = "running"
        self._on_finish = on_finish

    @property
    def duration(self) -> float:
        end = self.end_time if self.end_time is not None else time.perf_counter()
        return end - self.start_time

    def finish(self, status: str = "success", metadata: Optional[Dict[str, Any]] = None) -> float:
        self.end_time = time.perf_counter()
        self.status = status
        if metadata:
            self.metadata.update(metadata)
        logger.info(f"Trace {self.step_name} finished in {self.duration:.3f}s with status {self.status}")
        if self._on_finish is not None:
            self._on_finish(self)
        return self.duration


class Tracer:
    """Keeps the spans still open in this process (one per run in batch mode)."""
    def __init__(self):
        self.active_traces: Dict[str, Trace] = {}

    def start_trace(self, step_name: str, parent_id: Optional[str] = None) -> Trace:
        trace = Trace(step_name, parent_id, on_finish=self._release)
        self.active_traces[trace.trace_id] = trace
        return trace

    def _release(self, trace: Trace) -> None:
        self.active_traces.pop(trace.trace_id, None)


# Global tracer instance
tracer = Tracer()
