"""Clock abstraction plus a small deterministic discrete-event loop.

Components take a clock so the same code runs under virtual time (density
experiments) and wall-clock time (concurrency and proxy tests).
"""

from __future__ import annotations

import heapq
import itertools
import time
from typing import Callable, Optional


class Clock:
    def now(self) -> float:
        raise NotImplementedError


class RealClock(Clock):
    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0


class EventLoop(Clock):
    """Single-threaded discrete-event loop.

    Events fire in (time, insertion order) so runs are deterministic for a
    fixed schedule. Callbacks may schedule further events, including at the
    current instant.
    """

    def __init__(self, start: float = 0.0) -> None:
        self._now = start
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._counter = itertools.count()

    def now(self) -> float:
        return self._now

    def call_at(self, when: float, fn: Callable[[], None]) -> None:
        if when < self._now:
            raise ValueError(f"cannot schedule in the past: {when} < {self._now}")
        heapq.heappush(self._heap, (when, next(self._counter), fn))

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self.call_at(self._now + delay, fn)

    def run(self, until: Optional[float] = None) -> None:
        """Run events until the heap drains (or past `until`)."""
        while self._heap:
            when, _, fn = self._heap[0]
            if until is not None and when > until:
                self._now = until
                return
            heapq.heappop(self._heap)
            self._now = when
            fn()
        if until is not None and until > self._now:
            self._now = until

    def pending(self) -> int:
        return len(self._heap)
