"""Per-sandbox OS-effect tracking and checkpoint-granularity inference.

The inspector buffers each sandbox's effect events, and on demand folds the
interval since the last checkpoint baseline into a net-change report. It
reports *what* changed; deciding *when* to checkpoint is the coordinator's
job.

Net-change semantics here are exact with respect to the event stream. An
event-source adapter that can't be exact (coarser tracking, lost precision)
must err toward reporting *more* change, never less: false positives cost an
extra cheap checkpoint, a false negative breaks recovery.
"""

from __future__ import annotations

import threading
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import BaselineRegression, OutOfOrderSeq, SeqBeyondIngested, UnknownSandbox
from .events import (
    FsCreate,
    FsDelete,
    FsRename,
    FsWrite,
    OsEvent,
    ProcDirty,
    ProcExit,
    ProcSpawn,
    read_event_log,
)
from .netchange import (
    OP_FS_CREATE,
    OP_FS_DELETE,
    OP_FS_RENAME,
    OP_FS_WRITE,
    OP_PROC_DIRTY,
    OP_PROC_EXIT,
    OP_PROC_SPAWN,
    CheckpointClass,
    NetChangeReport,
    classify,
    fold_interval,
    report_from_codes,
)

__all__ = ["Inspector", "classify", "CheckpointClass"]


def _encode_payload(payload) -> tuple:
    if isinstance(payload, FsWrite):
        return (OP_FS_WRITE, payload.path)
    if isinstance(payload, FsCreate):
        return (OP_FS_CREATE, payload.path)
    if isinstance(payload, FsDelete):
        return (OP_FS_DELETE, payload.path)
    if isinstance(payload, FsRename):
        return (OP_FS_RENAME, payload.old_path, payload.new_path)
    if isinstance(payload, ProcSpawn):
        return (OP_PROC_SPAWN, payload.pid)
    if isinstance(payload, ProcExit):
        return (OP_PROC_EXIT, payload.pid)
    if isinstance(payload, ProcDirty):
        return (OP_PROC_DIRTY, payload.pid)
    raise TypeError(f"unknown payload {payload!r}")


@dataclass
class _Track:
    """Interval log and baseline for one sandbox."""

    baseline_seq: int
    pre_paths: frozenset[str]
    pre_pids: frozenset[int]
    excluded_pids: set[int] = field(default_factory=set)
    seqs: list[int] = field(default_factory=list)
    ops: list[tuple] = field(default_factory=list)
    last_seq: int = 0
    lock: threading.RLock = field(default_factory=threading.RLock)


class Inspector:
    def __init__(self) -> None:
        self._tracks: dict[str, _Track] = {}
        self._registry_lock = threading.Lock()

    # -- registration -----------------------------------------------------

    def register_sandbox(
        self,
        sandbox_id: str,
        preexisting_paths: Iterable[str] = (),
        preexisting_pids: Iterable[int] = (),
        excluded_pids: Iterable[int] = (),
        start_seq: int = 0,
    ) -> None:
        with self._registry_lock:
            if sandbox_id in self._tracks:
                raise ValueError(f"sandbox {sandbox_id!r} already registered")
            self._tracks[sandbox_id] = _Track(
                baseline_seq=start_seq,
                pre_paths=frozenset(preexisting_paths),
                pre_pids=frozenset(preexisting_pids),
                excluded_pids=set(excluded_pids),
                last_seq=start_seq,
            )

    def is_registered(self, sandbox_id: str) -> bool:
        return sandbox_id in self._tracks

    def _track(self, sandbox_id: str) -> _Track:
        try:
            return self._tracks[sandbox_id]
        except KeyError:
            raise UnknownSandbox(sandbox_id) from None

    # -- ingestion ---------------------------------------------------------

    def ingest_event(self, event: OsEvent) -> None:
        track = self._track(event.sandbox_id)
        with track.lock:
            if event.seq <= track.last_seq:
                raise OutOfOrderSeq(
                    f"{event.sandbox_id}: seq {event.seq} <= last {track.last_seq}"
                )
            if isinstance(event.payload, ProcSpawn) and event.payload.is_agent:
                track.excluded_pids.add(event.payload.pid)
            track.seqs.append(event.seq)
            track.ops.append(_encode_payload(event.payload))
            track.last_seq = event.seq

    def ingest_lines(self, lines: Iterable[str]) -> int:
        """External interface: consume a line-delimited event log."""
        n = 0
        for event in read_event_log(lines):
            self.ingest_event(event)
            n += 1
        return n

    def last_seq(self, sandbox_id: str) -> int:
        track = self._track(sandbox_id)
        with track.lock:
            return track.last_seq

    def interval_len(self, sandbox_id: str) -> int:
        track = self._track(sandbox_id)
        with track.lock:
            return len(track.ops)

    def excluded_pids(self, sandbox_id: str) -> frozenset[int]:
        track = self._track(sandbox_id)
        with track.lock:
            return frozenset(track.excluded_pids)

    # -- net change ---------------------------------------------------------

    def compute_net_change(self, sandbox_id: str, as_of_seq: Optional[int] = None) -> NetChangeReport:
        """Fold the interval log up to `as_of_seq` (default: latest).

        Read-only: the baseline does not move.
        """
        track = self._track(sandbox_id)
        with track.lock:
            if as_of_seq is None:
                as_of_seq = track.last_seq
            if as_of_seq > track.last_seq:
                raise SeqBeyondIngested(
                    f"{sandbox_id}: as_of_seq {as_of_seq} > ingested {track.last_seq}"
                )
            if as_of_seq < track.baseline_seq:
                raise SeqBeyondIngested(
                    f"{sandbox_id}: as_of_seq {as_of_seq} precedes baseline {track.baseline_seq}"
                )
            end = bisect_right(track.seqs, as_of_seq)
            ops = track.ops[:end]
            changed_paths, proc_delta = fold_interval(
                ops, track.pre_paths, track.pre_pids, frozenset(track.excluded_pids)
            )
        return report_from_codes(sandbox_id, as_of_seq, changed_paths, proc_delta)

    def classify_turn(self, sandbox_id: str, as_of_seq: Optional[int] = None) -> CheckpointClass:
        return classify(self.compute_net_change(sandbox_id, as_of_seq))

    # -- baseline management -------------------------------------------------

    def reset_baseline(
        self,
        sandbox_id: str,
        up_to_seq: int,
        new_preexisting_paths: Optional[Iterable[str]] = None,
        new_preexisting_pids: Optional[Iterable[int]] = None,
    ) -> None:
        """Advance the baseline past a completed checkpoint.

        Callers that know the post-checkpoint existence sets pass them in;
        otherwise they are derived by folding the discarded interval onto the
        old baseline. Events past `up_to_seq` stay buffered.
        """
        track = self._track(sandbox_id)
        with track.lock:
            if up_to_seq < track.baseline_seq:
                raise BaselineRegression(
                    f"{sandbox_id}: reset to {up_to_seq} behind baseline {track.baseline_seq}"
                )
            if up_to_seq > track.last_seq:
                raise SeqBeyondIngested(
                    f"{sandbox_id}: reset to {up_to_seq} beyond ingested {track.last_seq}"
                )
            end = bisect_right(track.seqs, up_to_seq)
            if new_preexisting_paths is None or new_preexisting_pids is None:
                paths, pids = self._roll_forward(track, end)
                if new_preexisting_paths is None:
                    new_preexisting_paths = paths
                if new_preexisting_pids is None:
                    new_preexisting_pids = pids
            track.pre_paths = frozenset(new_preexisting_paths)
            track.pre_pids = frozenset(new_preexisting_pids)
            track.seqs = track.seqs[end:]
            track.ops = track.ops[end:]
            track.baseline_seq = up_to_seq

    def rebaseline_after_restore(
        self,
        sandbox_id: str,
        preexisting_paths: Iterable[str],
        preexisting_pids: Iterable[int],
    ) -> None:
        """Replace the whole baseline with restored state, dropping the log.

        Sequence numbering continues from the last ingested seq so ordering
        checks keep holding across a restore.
        """
        track = self._track(sandbox_id)
        with track.lock:
            track.pre_paths = frozenset(preexisting_paths)
            track.pre_pids = frozenset(preexisting_pids)
            track.seqs = []
            track.ops = []
            track.baseline_seq = track.last_seq

    @staticmethod
    def _roll_forward(track: _Track, end: int) -> tuple[set[str], set[int]]:
        paths = set(track.pre_paths)
        pids = set(track.pre_pids)
        for op in track.ops[:end]:
            kind = op[0]
            if kind == OP_FS_CREATE:
                paths.add(op[1])
            elif kind == OP_FS_DELETE:
                paths.discard(op[1])
            elif kind == OP_FS_RENAME:
                paths.discard(op[1])
                paths.add(op[2])
            elif kind == OP_PROC_SPAWN:
                pids.add(op[1])
            elif kind == OP_PROC_EXIT:
                pids.discard(op[1])
        return paths, pids

    def baseline_info(self, sandbox_id: str) -> tuple[int, frozenset[str], frozenset[int]]:
        track = self._track(sandbox_id)
        with track.lock:
            return track.baseline_seq, track.pre_paths, track.pre_pids
