"""Simulated-latency backend for co-location experiments.

State capture is an in-memory copy (still real enough to restore from), while
op latency follows the calibrated model: filesystem snapshots cost a small
flat base even under concurrency, process dumps cost a base plus a transfer
term that contends for the host's shared dump bandwidth. Concurrent dumps
stretch each other: the bandwidth pool grants bytes to all active transfers
at an equal rate, so k simultaneous equal dumps each take ~k times the
uncontended transfer time.

Calibration defaults: fs snapshot 22 ms; proc dump 0.1 s base; 1.5 GB/s
shared bandwidth (sized so 16 concurrent 128 MB dumps take roughly 1.4 s
each, matching the measured concurrency blow-up).
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..clock import EventLoop
from ..errors import CorruptArtifact
from .base import BackendArtifact, RegistrySnapshot, SnapshotTarget
from .content_store import TreeEntry, tree_hash_of_entries

_TIME_EPS = 1e-9  # transfers within a nanosecond of done count as done


@dataclass
class LatencyModel:
    fs_snapshot_base: float = 0.022
    proc_dump_base: float = 0.1
    host_bandwidth: float = 1.5e9  # bytes/s, shared across all workers
    restore_multiplier: float = 1.0

    def uncontended(self, kind: str, size_bytes: int) -> float:
        """Latency with the bandwidth pool to itself (analytic form)."""
        if kind == "fs_snapshot":
            return self.fs_snapshot_base
        if kind == "proc_snapshot":
            return self.proc_dump_base + size_bytes / self.host_bandwidth
        if kind == "fs_restore":
            return self.fs_snapshot_base * self.restore_multiplier
        if kind == "proc_restore":
            return (self.proc_dump_base + size_bytes / self.host_bandwidth) * self.restore_multiplier
        raise ValueError(f"unknown op kind {kind!r}")


class SharedBandwidth:
    """Fluid token pool: refills at `bytes_per_sec`, granted equally across
    active transfers. Deterministic given arrival order; total grant rate
    never exceeds the configured bandwidth."""

    def __init__(self, loop: EventLoop, bytes_per_sec: float) -> None:
        self.loop = loop
        self.rate = float(bytes_per_sec)
        # byte remainders worth less than a nanosecond are below the loop's
        # float time resolution; treating them as live would stall the clock
        self._eps = max(1.0, self.rate * _TIME_EPS)
        self._active: dict[int, float] = {}
        self._done_cbs: dict[int, Callable[[], None]] = {}
        self._ids = itertools.count()
        self._last = loop.now()
        self._epoch = 0
        self.granted_bytes = 0.0

    def start_transfer(self, size_bytes: float, on_done: Callable[[], None]) -> None:
        self._advance()
        if size_bytes <= 0:
            self.loop.call_later(0.0, on_done)
            return
        tid = next(self._ids)
        self._active[tid] = float(size_bytes)
        self._done_cbs[tid] = on_done
        self._reschedule()

    def active_count(self) -> int:
        return len(self._active)

    def _advance(self) -> None:
        now = self.loop.now()
        dt = now - self._last
        self._last = now
        if dt <= 0 or not self._active:
            return
        share = self.rate * dt / len(self._active)
        self.granted_bytes += self.rate * dt
        for tid in self._active:
            self._active[tid] -= share

    def _reschedule(self) -> None:
        self._epoch += 1
        if not self._active:
            return
        epoch = self._epoch
        min_rem = min(self._active.values())
        eta = max(min_rem, 0.0) * len(self._active) / self.rate
        self.loop.call_later(eta, lambda: self._fire(epoch))

    def _fire(self, epoch: int) -> None:
        if epoch != self._epoch:
            return  # superseded by a later arrival/completion
        self._advance()
        finished = sorted(tid for tid, rem in self._active.items() if rem <= self._eps)
        if not finished and self._active:
            # a non-stale fire sits exactly at the minimum's completion time;
            # float underflow may have kept its remainder positive
            least = min(self._active.values())
            finished = sorted(tid for tid, rem in self._active.items() if rem <= least)
        for tid in finished:
            del self._active[tid]
            cb = self._done_cbs.pop(tid)
            cb()
        self._reschedule()


class SimulatedBackend:
    """In-memory snapshots plus model-driven completion times.

    Virtual mode (`loop` given): `start_op` schedules the completion on the
    event loop, contending for the shared bandwidth pool. Real-clock mode
    (`loop=None`): `op_sleep` blocks for the uncontended latency, optionally
    time-scaled; the contention model is virtual-mode only.
    """

    name = "simulated"

    def __init__(
        self,
        latency: Optional[LatencyModel] = None,
        loop: Optional[EventLoop] = None,
        time_factor: float = 1.0,
    ) -> None:
        self.latency = latency or LatencyModel()
        self.loop = loop
        self.time_factor = time_factor
        self._fs: dict[str, tuple[TreeEntry, ...]] = {}
        self._proc: dict[str, RegistrySnapshot] = {}
        self._lock = threading.Lock()
        self.bandwidth = SharedBandwidth(loop, self.latency.host_bandwidth) if loop else None

    # -- capture / restore (immediate, real state) ---------------------------

    def snapshot_fs(self, sandbox: SnapshotTarget) -> BackendArtifact:
        entries = tuple(sandbox.tree_entries())
        digest = tree_hash_of_entries(entries)
        handle = f"sim-fs:{digest}"
        size = sum(len(p) for _, k, _, p in entries if k != "d")
        with self._lock:
            self._fs.setdefault(handle, entries)
        return BackendArtifact(handle=handle, size_bytes=size)

    def snapshot_proc(self, sandbox: SnapshotTarget) -> BackendArtifact:
        registry = dict(sandbox.registry_snapshot())
        key = ",".join(f"{pid}:{e[0]}:{e[1]}:{int(e[2])}" for pid, e in sorted(registry.items()))
        handle = f"sim-proc:{hash_key(key)}"
        with self._lock:
            self._proc.setdefault(handle, registry)
        return BackendArtifact(handle=handle, size_bytes=sum(e[1] for e in registry.values()))

    def restore_fs(self, handle: str, target: SnapshotTarget) -> None:
        with self._lock:
            if handle not in self._fs:
                raise CorruptArtifact(f"unknown artifact {handle!r}")
            entries = list(self._fs[handle])
        target.apply_tree(entries)

    def restore_proc(self, handle: str, target: SnapshotTarget) -> None:
        with self._lock:
            if handle not in self._proc:
                raise CorruptArtifact(f"unknown artifact {handle!r}")
            registry = dict(self._proc[handle])
        target.replace_registry(registry)

    def artifact_size(self, handle: str) -> int:
        with self._lock:
            if handle in self._fs:
                return sum(len(p) for _, k, _, p in self._fs[handle] if k != "d")
            if handle in self._proc:
                return sum(e[1] for e in self._proc[handle].values())
        raise CorruptArtifact(f"unknown artifact {handle!r}")

    # -- latency ---------------------------------------------------------

    def start_op(self, kind: str, size_bytes: int, on_complete: Callable[[], None]) -> None:
        """Virtual mode: complete `on_complete` at the modeled instant."""
        assert self.loop is not None and self.bandwidth is not None
        if kind == "fs_snapshot":
            self.loop.call_later(self.latency.fs_snapshot_base, on_complete)
        elif kind == "proc_snapshot":
            self.loop.call_later(
                self.latency.proc_dump_base,
                lambda: self.bandwidth.start_transfer(size_bytes, on_complete),
            )
        else:
            self.loop.call_later(self.latency.uncontended(kind, size_bytes), on_complete)

    def simulate_latency(self, op_kind: str, size_bytes: int, on_complete=None) -> float:
        """Schedule an op (virtual mode) and return its estimated completion
        time. The estimate is exact when the bandwidth pool is otherwise
        idle; under contention the `on_complete` callback is authoritative
        (concurrent dumps stretch each other)."""
        assert self.loop is not None
        if on_complete is not None:
            self.start_op(op_kind, size_bytes, on_complete)
        return self.loop.now() + self.latency.uncontended(op_kind, size_bytes)

    def op_sleep(self, kind: str, size_bytes: int) -> None:
        """Real-clock mode: block for the uncontended latency."""
        time.sleep(self.latency.uncontended(kind, size_bytes) * self.time_factor)


def hash_key(key: str) -> str:
    import hashlib

    return hashlib.sha256(key.encode()).hexdigest()[:32]
