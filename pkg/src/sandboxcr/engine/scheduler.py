"""Two-FIFO reactive job ordering.

New jobs enter the normal queue; promotion moves a still-pending job to the
tail of the high queue. Dispatch always prefers the high queue. The ``fifo``
policy keeps the same plumbing but makes promotion a no-op, which is exactly
the baseline the reactive policy is measured against.
"""

from __future__ import annotations

import threading
from collections import deque
from typing import Optional


class TwoQueueScheduler:
    def __init__(self, reactive: bool = True) -> None:
        self.reactive = reactive
        self._normal: deque[str] = deque()
        self._high: deque[str] = deque()
        self._in_normal: set[str] = set()
        self._in_high: set[str] = set()
        self._lock = threading.Lock()
        # stats
        self.promotions = 0
        self.promote_noops = 0
        self.max_normal_depth = 0
        self.max_high_depth = 0

    def submit(self, job_id: str) -> None:
        with self._lock:
            self._normal.append(job_id)
            self._in_normal.add(job_id)
            self.max_normal_depth = max(self.max_normal_depth, len(self._normal))

    def promote(self, job_id: str) -> bool:
        """Move a queued job to the high queue; False if it already left."""
        with self._lock:
            if job_id not in self._in_normal:
                self.promote_noops += 1
                return False
            if not self.reactive:
                self.promote_noops += 1
                return False
            self._normal.remove(job_id)
            self._in_normal.discard(job_id)
            self._high.append(job_id)
            self._in_high.add(job_id)
            self.promotions += 1
            self.max_high_depth = max(self.max_high_depth, len(self._high))
            return True

    def next_job(self) -> Optional[str]:
        with self._lock:
            if self._high:
                job_id = self._high.popleft()
                self._in_high.discard(job_id)
                return job_id
            if self._normal:
                job_id = self._normal.popleft()
                self._in_normal.discard(job_id)
                return job_id
            return None

    def queued(self, job_id: str) -> bool:
        with self._lock:
            return job_id in self._in_normal or job_id in self._in_high

    def depths(self) -> tuple[int, int]:
        with self._lock:
            return len(self._normal), len(self._high)

    def stats(self) -> dict:
        with self._lock:
            return {
                "promotions": self.promotions,
                "promote_noops": self.promote_noops,
                "max_normal_depth": self.max_normal_depth,
                "max_high_depth": self.max_high_depth,
            }
