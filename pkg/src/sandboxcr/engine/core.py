"""Host-scoped checkpoint engine.

Orders jobs across co-located sandboxes (two-queue reactive scheduler),
executes them against a backend, and publishes versioned manifests
transactionally: a version becomes visible in `list_versions` atomically
with its job entering Done, and a job that fails at any stage leaves no
trace in the version chain.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from ..clock import Clock, RealClock
from ..errors import (
    BackendFailure,
    CorruptArtifact,
    DuplicateTurnJob,
    IoFailure,
    MissingCounterpart,
    SandboxCrError,
    UnknownJob,
    UnknownSandbox,
)
from ..netchange import CheckpointClass
from .jobs import CheckpointJob, Lifecycle, Priority
from .scheduler import TwoQueueScheduler
from .store import ArtifactRecord, CheckpointManifest, ManifestStore

INITIAL_TURN = -1  # turn index of the registration-time full capture


class FaultInjector:
    """Seeded per-stage failure injection for transactional-publication tests."""

    STAGES = ("fs_snapshot", "proc_snapshot", "versioning")

    def __init__(self, probability: float, seed: int, stages: Iterable[str] = STAGES) -> None:
        self.probability = probability
        self.stages = frozenset(stages)
        self._rng = random.Random(seed)
        self.injected: list[tuple[str, str]] = []

    def should_fail(self, stage: str, job: CheckpointJob) -> bool:
        if stage not in self.stages:
            return False
        if self._rng.random() < self.probability:
            self.injected.append((job.job_id, stage))
            return True
        return False


@dataclass(frozen=True)
class RestoreReport:
    sandbox_id: str
    target_sandbox_id: str
    version_id: int
    proc_turn: int
    fs_turn: int
    covers_turn: int
    wall_time_s: float


class Engine:
    def __init__(
        self,
        backend,
        store: ManifestStore,
        clock: Optional[Clock] = None,
        reactive: bool = True,
        fault_injector: Optional[FaultInjector] = None,
        inspector=None,
    ) -> None:
        self.backend = backend
        self.store = store
        self.clock = clock or RealClock()
        self.scheduler = TwoQueueScheduler(reactive)
        self.fault_injector = fault_injector
        self.inspector = inspector
        self._jobs: dict[str, CheckpointJob] = {}
        self._live_turns: dict[tuple[str, int], str] = {}
        self._sandboxes: dict[str, object] = {}
        self._lock = threading.RLock()
        self.work_cv = threading.Condition(self._lock)
        self._terminal_listeners: list[Callable[[CheckpointJob], None]] = []
        self._restore_listeners: list[Callable[[RestoreReport], None]] = []
        self._submit_hooks: list[Callable[[], None]] = []
        self._job_counter = 0
        self._artifact_counter = 0
        self.submitted = 0
        self.done = 0
        self.failed = 0
        self.in_flight: set[str] = set()
        self.completion_order: list[str] = []

    # -- wiring --------------------------------------------------------------

    def add_terminal_listener(self, fn: Callable[[CheckpointJob], None]) -> None:
        self._terminal_listeners.append(fn)

    def add_restore_listener(self, fn: Callable[[RestoreReport], None]) -> None:
        self._restore_listeners.append(fn)

    def add_submit_hook(self, fn: Callable[[], None]) -> None:
        fn_list = self._submit_hooks
        fn_list.append(fn)

    # -- registration ---------------------------------------------------------

    def register_sandbox(self, sandbox, capture_initial: bool = True) -> Optional[CheckpointManifest]:
        """Register a sandbox; optionally capture its creation-time full
        checkpoint so partial checkpoints always have a counterpart.

        The initial capture publishes version 0 at turn -1. Without it, a
        partial first checkpoint raises MissingCounterpart.
        """
        sandbox_id = sandbox.sandbox_id
        with self._lock:
            if sandbox_id in self._sandboxes:
                raise ValueError(f"sandbox {sandbox_id!r} already registered")
            self._sandboxes[sandbox_id] = sandbox
            self.store.register_sandbox(sandbox_id)
        if not capture_initial:
            return None
        job = self._new_job(sandbox_id, INITIAL_TURN, CheckpointClass.FULL, up_to_seq=0)
        with self._lock:
            job.advance(Lifecycle.DUMPING)
            job.start_time = self.clock.now()
        self.execute(job.job_id, inject=False)
        return self.publish(job.job_id, inject=False)

    def sandbox(self, sandbox_id: str):
        try:
            return self._sandboxes[sandbox_id]
        except KeyError:
            raise UnknownSandbox(sandbox_id) from None

    # -- job intake -----------------------------------------------------------

    def _new_job(self, sandbox_id: str, turn_index: int, klass: CheckpointClass, up_to_seq: int) -> CheckpointJob:
        with self._lock:
            self._job_counter += 1
            job = CheckpointJob(
                job_id=f"j{self._job_counter:06d}",
                sandbox_id=sandbox_id,
                turn_index=turn_index,
                klass=klass,
                up_to_seq=up_to_seq,
                enqueue_time=self.clock.now(),
            )
            self._jobs[job.job_id] = job
            self._live_turns[(sandbox_id, turn_index)] = job.job_id
            self.submitted += 1
            return job

    def submit(
        self, sandbox_id: str, turn_index: int, klass: CheckpointClass, up_to_seq: int
    ) -> CheckpointJob:
        if klass is CheckpointClass.SKIP:
            raise ValueError("Skip turns are not submitted")
        with self._lock:
            if sandbox_id not in self._sandboxes:
                raise UnknownSandbox(sandbox_id)
            live = self._live_turns.get((sandbox_id, turn_index))
            if live is not None and not self._jobs[live].terminal:
                raise DuplicateTurnJob(f"{sandbox_id} turn {turn_index} already has job {live}")
            job = self._new_job(sandbox_id, turn_index, klass, up_to_seq)
            self.scheduler.submit(job.job_id)
            self.work_cv.notify_all()
        for hook in self._submit_hooks:
            hook()
        return job

    def promote(self, job_id: str) -> None:
        """Urgency signal: move a still-pending job to the high queue.

        Idempotent; a no-op once the job left the queues (already dumping,
        versioning, or terminal)."""
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise UnknownJob(job_id)
            if self.scheduler.promote(job_id):
                job.priority = Priority.HIGH
            self.work_cv.notify_all()

    def next_job(self) -> Optional[CheckpointJob]:
        with self._lock:
            job_id = self.scheduler.next_job()
            if job_id is None:
                return None
            job = self._jobs[job_id]
            job.advance(Lifecycle.DUMPING)
            job.start_time = self.clock.now()
            self.in_flight.add(job_id)
            return job

    def get_job(self, job_id: str) -> CheckpointJob:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise UnknownJob(job_id)
            return job

    # -- execution --------------------------------------------------------------

    _CLASS_PARTS = {
        CheckpointClass.FS_ONLY: ("fs",),
        CheckpointClass.PROC_ONLY: ("proc",),
        CheckpointClass.FULL: ("fs", "proc"),  # fs then proc in one quiesced window
    }

    def execute(self, job_id: str, inject: bool = True) -> None:
        """Run the job's backend snapshots; stage artifacts for publication.

        Raises BackendFailure (job -> Failed, staged artifacts discarded)."""
        job = self.get_job(job_id)
        if job.lifecycle is not Lifecycle.DUMPING:
            raise ValueError(f"execute on {job.lifecycle} job {job_id}")
        sandbox = self.sandbox(job.sandbox_id)
        try:
            for part in self._CLASS_PARTS[job.klass]:
                stage = f"{part}_snapshot"
                if inject and self.fault_injector and self.fault_injector.should_fail(stage, job):
                    raise BackendFailure(f"injected fault: {stage}")
                if part == "fs":
                    art = self.backend.snapshot_fs(sandbox)
                else:
                    art = self.backend.snapshot_proc(sandbox)
                job.staged.append((part, art))
        except (BackendFailure, IoFailure, CorruptArtifact) as exc:
            self._fail(job, exc)
            raise BackendFailure(str(exc)) from exc
        with self._lock:
            job.advance(Lifecycle.VERSIONING)

    def publish(self, job_id: str, inject: bool = True) -> CheckpointManifest:
        """Pair staged artifacts with latest counterparts and commit a version."""
        job = self.get_job(job_id)
        if job.lifecycle is not Lifecycle.VERSIONING:
            raise ValueError(f"publish on {job.lifecycle} job {job_id}")
        try:
            with self._lock:
                if inject and self.fault_injector and self.fault_injector.should_fail("versioning", job):
                    raise BackendFailure("injected fault: versioning")
                staged = dict(job.staged)
                new_records: list[ArtifactRecord] = []

                def record(part: str) -> ArtifactRecord:
                    art = staged[part]
                    self._artifact_counter += 1
                    rec = ArtifactRecord(
                        artifact_id=f"a{self._artifact_counter:06d}",
                        kind=part,
                        sandbox_id=job.sandbox_id,
                        turn_index=job.turn_index,
                        backend_handle=art.handle,
                        logical_size_bytes=art.size_bytes,
                        created_at=self.clock.now(),
                    )
                    new_records.append(rec)
                    return rec

                prev = self.store.latest(job.sandbox_id)
                if "proc" in staged:
                    proc_rec = record("proc")
                elif prev is not None:
                    proc_rec = prev.proc_artifact
                else:
                    raise MissingCounterpart(
                        f"{job.sandbox_id}: no process artifact to pair with (initial capture disabled)"
                    )
                if "fs" in staged:
                    fs_rec = record("fs")
                elif prev is not None:
                    fs_rec = prev.fs_artifact
                else:
                    raise MissingCounterpart(
                        f"{job.sandbox_id}: no filesystem artifact to pair with (initial capture disabled)"
                    )
                manifest = CheckpointManifest(
                    sandbox_id=job.sandbox_id,
                    version_id=self.store.next_version_id(job.sandbox_id),
                    proc_artifact=proc_rec,
                    fs_artifact=fs_rec,
                    proc_turn=proc_rec.turn_index,
                    fs_turn=fs_rec.turn_index,
                    covers_turn=job.turn_index,
                    parent_version=prev.version_id if prev else None,
                )
                self.store.publish(manifest, new_records)
                job.advance(Lifecycle.DONE)
                job.completion_time = self.clock.now()
                self.done += 1
                self.in_flight.discard(job_id)
                self.completion_order.append(job_id)
        except MissingCounterpart as exc:
            self._fail(job, exc)
            raise
        except (BackendFailure, IoFailure) as exc:
            self._fail(job, exc)
            raise BackendFailure(str(exc)) from exc
        self._notify_terminal(job)
        return manifest

    def run_job(self, job: CheckpointJob) -> None:
        """execute+publish, converting failures into the Failed terminal."""
        try:
            self.execute(job.job_id)
            self.publish(job.job_id)
        except SandboxCrError:
            pass  # job already moved to Failed and listeners fired

    def fail_job(self, job_id: str, reason: str) -> None:
        job = self.get_job(job_id)
        self._fail(job, BackendFailure(reason))

    def _fail(self, job: CheckpointJob, exc: Exception) -> None:
        with self._lock:
            if job.terminal:
                return
            job.lifecycle = Lifecycle.FAILED
            job.error = str(exc)
            job.completion_time = self.clock.now()
            job.staged.clear()
            self.failed += 1
            self.in_flight.discard(job.job_id)
            self.completion_order.append(job.job_id)
        self._notify_terminal(job)

    def _notify_terminal(self, job: CheckpointJob) -> None:
        for fn in self._terminal_listeners:
            fn(job)

    # -- recovery ----------------------------------------------------------------

    def list_versions(self, sandbox_id: str) -> list[CheckpointManifest]:
        return self.store.list_versions(sandbox_id)

    def restore(
        self, sandbox_id: str, version_id: int, target_sandbox_id: Optional[str] = None
    ) -> RestoreReport:
        """Roll a sandbox back to a published version, or fork it into a
        fresh registered sandbox id."""
        manifest = self.store.get(sandbox_id, version_id)
        target_id = target_sandbox_id or sandbox_id
        target = self.sandbox(target_id)
        t0 = time.perf_counter()
        try:
            self.backend.restore_fs(manifest.fs_artifact.backend_handle, target)
            self.backend.restore_proc(manifest.proc_artifact.backend_handle, target)
        except (IoFailure, CorruptArtifact, BackendFailure) as exc:
            target.mark_invalid()
            raise BackendFailure(f"restore of {sandbox_id} v{version_id} failed: {exc}") from exc
        target.mark_restored()
        if self.inspector is not None and self.inspector.is_registered(target_id):
            self.inspector.rebaseline_after_restore(
                target_id, target.list_paths(), target.list_pids()
            )
        report = RestoreReport(
            sandbox_id=sandbox_id,
            target_sandbox_id=target_id,
            version_id=version_id,
            proc_turn=manifest.proc_turn,
            fs_turn=manifest.fs_turn,
            covers_turn=manifest.covers_turn,
            wall_time_s=time.perf_counter() - t0,
        )
        for fn in self._restore_listeners:
            fn(report)
        return report

    # -- stats ------------------------------------------------------------------

    def job_stats(self) -> dict:
        with self._lock:
            normal, high = self.scheduler.depths()
            return {
                "submitted": self.submitted,
                "done": self.done,
                "failed": self.failed,
                "queued_normal": normal,
                "queued_high": high,
                "in_flight": len(self.in_flight),
                **self.scheduler.stats(),
            }

    def jobs_snapshot(self) -> list[CheckpointJob]:
        with self._lock:
            return list(self._jobs.values())
