import logging
import time
from contextlib import contextmanager
from typing import Dict

logger = logging.getLogger(__name__)


class ProgressTracker:
    """Time named phases and log long-running iterations at a throttled rate."""

    def __init__(self, operation: str, interval: float = 2.0):
        self.operation = operation
        self.interval = interval
        self.start_time = time.time()
        self.last_update = time.time()
        self.timings: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        """Record the wall time of the enclosed block in milliseconds under `name`."""
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = 1000.0 * (time.perf_counter() - start)
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            logger.debug(f"{self.operation}: {name} took {elapsed:.1f} ms")

    def tick(self, iteration: int, residual: float):
        """Log iteration progress, at most once per interval seconds."""
        logger.debug(f"{self.operation} iteration {iteration}: residual {residual:.3e}")
        # throttled so long solves do not flood the log
        if time.time() - self.last_update < self.interval:
            return
        self.last_update = time.time()
        elapsed = time.time() - self.start_time
        logger.info(f"⏳ {self.operation}: iteration {iteration}, residual {residual:.3e}, "
                    f"elapsed {self._format_time(elapsed)}")

    def final_status(self, message: str):
        elapsed = time.time() - self.start_time
        logger.info(f"{message} (total time: {self._format_time(elapsed)})")

    @staticmethod
    def _format_time(seconds: float) -> str:
        """Format seconds to human readable format."""
        if seconds < 60:
            return f"{seconds:.1f}s"
        elif seconds < 3600:
            return f"{int(seconds // 60)}m {int(seconds % 60)}s"
        else:
            hours = int(seconds // 3600)
            minutes = int((seconds % 3600) // 60)
            return f"{hours}h {minutes}m"
