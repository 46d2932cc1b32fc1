"""
Progress Logger - milestone-throttled progress for long Monte Carlo loops.

Replicate chunks finish at their own pace; progress lines are throttled on
the time elapsed since a key (one index n) started.
"""

import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

# Progress logging intervals (absolute milestones from first event)
# If value > prev_log_time, it's an absolute milestone; otherwise it's added
# to prev_log_time. Last value repeats indefinitely.
# Example: [2, 10, 60, 600, 3600] logs at t=2s, 10s, 1min, 10min, 1hr, 2hr, ...
PROGRESS_LOG_INTERVALS = [2, 10, 60, 600, 3600]


def format_duration(seconds: float) -> str:
    if seconds < 60:
        return f"{int(seconds)}s"
    if seconds < 3600:
        return f"{int(seconds // 60)}m"
    if seconds < 86400:
        return f"{int(seconds // 3600)}h"
    return f"{int(seconds // 86400)}d"


@dataclass
class _Tracker:
    start_time: float
    total: int
    next_log_time: float
    prev_log_time: float = 0.0
    interval_index: int = 0
    done: int = 0
    logged_once: bool = False

    def pass_milestone(self, intervals: List[float]):
        self.prev_log_time = self.next_log_time
        self.interval_index += 1
        interval = intervals[min(self.interval_index, len(intervals) - 1)]
        # milestone rule: absolute if beyond the previous one, else cumulative
        self.next_log_time = interval if interval > self.prev_log_time else self.prev_log_time + interval

    def remaining(self, elapsed: float) -> Optional[float]:
        """Linear extrapolation of the time left; None before the first unit or after the last."""
        if self.done <= 0 or self.done >= self.total or elapsed <= 0:
            return None
        return elapsed * (self.total - self.done) / self.done


class ProgressLogger:
    """
    Throttles progress messages per key (e.g. "n016") using time milestones.

    The first update of a key always logs, and so does the final one
    (done == total); updates in between log only at the milestones.
    """

    def __init__(self, intervals: Optional[List[float]] = None, clock: Callable[[], float] = time.monotonic):
        self.intervals = intervals or PROGRESS_LOG_INTERVALS
        self._clock = clock
        self._trackers: Dict[str, _Tracker] = {}
        self._lock = threading.Lock()

    def start(self, key: str, total: int):
        """Begin tracking key with total work units (replicates)."""
        with self._lock:
            self._trackers[key] = _Tracker(start_time=self._clock(), total=int(total),
                                           next_log_time=self.intervals[0])

    def advance(self, key: str, units: int = 1) -> bool:
        """
        Record completed units for key.

        Returns:
            True if a progress line should be logged now.
        """
        now = self._clock()
        with self._lock:
            tracker = self._trackers.get(key)
            if tracker is None:
                return False
            tracker.done += int(units)

            if not tracker.logged_once or tracker.done >= tracker.total:
                tracker.logged_once = True
                return True
            if now - tracker.start_time >= tracker.next_log_time:
                tracker.pass_milestone(self.intervals)
                return True
            return False

    def get_done(self, key: str) -> int:
        with self._lock:
            tracker = self._trackers.get(key)
            return tracker.done if tracker else 0

    def reset(self, key: str):
        """Stop tracking key (call once its work is complete)."""
        with self._lock:
            self._trackers.pop(key, None)

    def format_progress(self, key: str) -> str:
        """
        Format progress for logging, e.g. "(250/2000, 12.5%, 3s elapsed, ~25s left)".
        """
        now = self._clock()
        with self._lock:
            tracker = self._trackers.get(key)
            if tracker is None:
                return ""
            elapsed = now - tracker.start_time
            share = 100.0 * tracker.done / tracker.total if tracker.total else 100.0
            text = f"({tracker.done}/{tracker.total}, {share:.1f}%, {format_duration(elapsed)} elapsed"
            left = tracker.remaining(elapsed)
            if left is not None:
                text += f", ~{format_duration(left)} left"
            return text + ")"


# Global progress logger instance
progress_logger = ProgressLogger()
