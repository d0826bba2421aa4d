"""Clock abstraction shared by the live engine and the simulator.

All timing code in the package works on integer microseconds so the
same scheduler logic can run against a wall clock or a virtual one
without float drift.
"""

from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    """Source of monotonic integer-microsecond timestamps."""

    def now_us(self) -> int: ...


class WallClock:
    """Monotonic wall clock. Timestamps are process-relative."""

    def now_us(self) -> int:
        return time.monotonic_ns() // 1000


class VirtualClock:
    """Manually advanced clock for deterministic runs."""

    def __init__(self, start_us: int = 0) -> None:
        self._now = start_us

    def now_us(self) -> int:
        return self._now

    def advance_to(self, t_us: int) -> None:
        if t_us < self._now:
            raise ValueError(f"clock cannot move backwards: {t_us} < {self._now}")
        self._now = t_us

    def advance(self, delta_us: int) -> None:
        self.advance_to(self._now + delta_us)
