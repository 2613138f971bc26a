"""Execution drivers: who actually runs jobs the scheduler hands out.

`WorkerThreadPool` is the real-clock driver (one thread per worker slot).
`VirtualWorkerDriver` drives the same engine inside a discrete-event loop
for density experiments: captures happen at dispatch, completion fires at
the instant the latency model dictates.
"""

from __future__ import annotations

import os
import threading
from typing import Optional

from ..clock import EventLoop
from ..errors import SandboxCrError
from .core import Engine
from .jobs import CheckpointJob


def default_worker_count() -> int:
    cores = os.cpu_count() or 8
    return max(1, min(cores // 8, 8))


class WorkerThreadPool:
    def __init__(self, engine: Engine, workers: Optional[int] = None) -> None:
        self.engine = engine
        self.workers = workers or default_worker_count()
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()

    def start(self) -> None:
        for i in range(self.workers):
            t = threading.Thread(target=self._loop, name=f"ckpt-worker-{i}", daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        with self.engine.work_cv:
            self.engine.work_cv.notify_all()
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()

    def _loop(self) -> None:
        while not self._stop.is_set():
            with self.engine.work_cv:
                job = self.engine.next_job()
                if job is None:
                    self.engine.work_cv.wait(timeout=0.02)
                    continue
            self._run(job)

    def _run(self, job: CheckpointJob) -> None:
        try:
            self.engine.execute(job.job_id)
        except SandboxCrError:
            return
        # simulated backend models dump latency as a sleep; the portable
        # backend's latency is its real I/O, already spent in execute()
        op_sleep = getattr(self.engine.backend, "op_sleep", None)
        if op_sleep is not None:
            for part, art in job.staged:
                op_sleep(f"{part}_snapshot", art.size_bytes)
        try:
            self.engine.publish(job.job_id)
        except SandboxCrError:
            return


class VirtualWorkerDriver:
    """Drives the engine inside an EventLoop with `slots` worker slots."""

    def __init__(self, engine: Engine, loop: EventLoop, slots: int = 8) -> None:
        self.engine = engine
        self.loop = loop
        self.slots_free = slots
        self._dispatch_scheduled = False
        engine.add_submit_hook(self._schedule_dispatch)

    def _schedule_dispatch(self) -> None:
        if self._dispatch_scheduled:
            return
        self._dispatch_scheduled = True
        self.loop.call_later(0.0, self._dispatch)

    def _dispatch(self) -> None:
        self._dispatch_scheduled = False
        while self.slots_free > 0:
            job = self.engine.next_job()
            if job is None:
                return
            self.slots_free -= 1
            self._start(job)

    def _start(self, job: CheckpointJob) -> None:
        try:
            self.engine.execute(job.job_id)
        except SandboxCrError:
            self._release_slot()
            return
        parts = [(part, art.size_bytes) for part, art in job.staged]
        # backends without a latency model (portable: latency is its real
        # I/O, already spent in execute) complete at the current instant
        start_op = getattr(self.engine.backend, "start_op", None) or (
            lambda kind, size, cb: self.loop.call_later(0.0, cb)
        )

        def run_part(i: int) -> None:
            if i >= len(parts):
                try:
                    self.engine.publish(job.job_id)
                except SandboxCrError:
                    pass
                self._release_slot()
                return
            kind, size = parts[i]
            start_op(f"{kind}_snapshot", size, lambda: run_part(i + 1))

        run_part(0)

    def _release_slot(self) -> None:
        self.slots_free += 1
        self._schedule_dispatch()
