"""Clock sources.

Everything that stamps or compares timestamps takes a clock so tests can
drive virtual time: the full retry ladder, cron schedules, and failover
scenarios run in milliseconds of wall time.
"""

from __future__ import annotations

import threading
import time


class Clock:
    """Interface: int64 nanoseconds since the Unix epoch."""

    def now_ns(self) -> int:
        raise NotImplementedError


class SystemClock(Clock):
    def now_ns(self) -> int:
        return time.time_ns()


class VirtualClock(Clock):
    """Manually advanced clock; thread-safe."""

    def __init__(self, start_ns: int = 1_700_000_000_000_000_000):
        self._now = start_ns
        self._lock = threading.Lock()

    def now_ns(self) -> int:
        with self._lock:
            return self._now

    def advance(self, seconds: float = 0.0, ns: int = 0) -> int:
        with self._lock:
            self._now += int(seconds * 1e9) + ns
            return self._now

    def set_ns(self, value: int) -> None:
        with self._lock:
            self._now = value


class StepClock(VirtualClock):
    """Virtual clock that also steps forward a fixed amount per read.

    Used by differential-replay tests so every server-assigned timestamp
    is deterministic yet strictly increasing.
    """

    def __init__(self, start_ns: int = 1_700_000_000_000_000_000, step_ns: int = 1_000_000):
        super().__init__(start_ns)
        self._step = step_ns

    def now_ns(self) -> int:
        with self._lock:
            value = self._now
            self._now += self._step
            return value
