"""Independent state-diff oracle.

Materializes sandbox state by applying events one at a time, then diffs two
states. This is the reference the interval fold is checked against: it never
looks at intervals, baselines, or the fold's bookkeeping.

Content identity is tracked as an opaque token that every create, write, and
rename-target assignment refreshes. A write that restores prior bytes still
counts as modified, and a rename away and back counts as modified; byte-level
equality detection is explicitly out of scope. Processes carry an incarnation
token (refreshed on spawn) plus a memory-touch counter.

Apply is strict: malformed transitions (create over an existing path, dirty
on a dead pid, ...) raise, so generator bugs surface instead of skewing the
oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Iterable

from .events import FsCreate, FsDelete, FsRename, FsWrite, Payload, ProcDirty, ProcExit, ProcSpawn
from .netchange import (
    PATH_CREATED,
    PATH_DELETED,
    PATH_MODIFIED,
    PROC_DIRTIED,
    PROC_EXITED,
    PROC_SPAWNED,
)


@dataclass
class MaterializedState:
    paths: dict[str, int] = field(default_factory=dict)
    procs: dict[int, tuple[int, int]] = field(default_factory=dict)  # pid -> (incarnation, touches)
    _next_token: int = 0

    @classmethod
    def from_sets(cls, paths: Collection[str], pids: Collection[int]) -> "MaterializedState":
        state = cls()
        for p in sorted(paths):
            state.paths[p] = state._fresh()
        for pid in sorted(pids):
            state.procs[pid] = (state._fresh(), 0)
        return state

    def _fresh(self) -> int:
        self._next_token += 1
        return self._next_token

    def copy(self) -> "MaterializedState":
        c = MaterializedState(dict(self.paths), dict(self.procs))
        c._next_token = self._next_token
        return c

    def apply(self, payload: Payload) -> None:
        if isinstance(payload, FsCreate):
            if payload.path in self.paths:
                raise ValueError(f"create over existing path {payload.path}")
            self.paths[payload.path] = self._fresh()
        elif isinstance(payload, FsWrite):
            if payload.path not in self.paths:
                raise ValueError(f"write to missing path {payload.path}")
            self.paths[payload.path] = self._fresh()
        elif isinstance(payload, FsDelete):
            if payload.path not in self.paths:
                raise ValueError(f"delete of missing path {payload.path}")
            del self.paths[payload.path]
        elif isinstance(payload, FsRename):
            if payload.old_path not in self.paths:
                raise ValueError(f"rename of missing path {payload.old_path}")
            if payload.new_path in self.paths:
                raise ValueError(f"rename onto existing path {payload.new_path}")
            del self.paths[payload.old_path]
            self.paths[payload.new_path] = self._fresh()
        elif isinstance(payload, ProcSpawn):
            if payload.pid in self.procs:
                raise ValueError(f"spawn of live pid {payload.pid}")
            self.procs[payload.pid] = (self._fresh(), 0)
        elif isinstance(payload, ProcExit):
            if payload.pid not in self.procs:
                raise ValueError(f"exit of dead pid {payload.pid}")
            del self.procs[payload.pid]
        elif isinstance(payload, ProcDirty):
            if payload.pid not in self.procs:
                raise ValueError(f"dirty on dead pid {payload.pid}")
            inc, touches = self.procs[payload.pid]
            self.procs[payload.pid] = (inc, touches + 1)
        else:
            raise TypeError(f"unknown payload {payload!r}")

    def apply_all(self, payloads: Iterable[Payload]) -> "MaterializedState":
        for p in payloads:
            self.apply(p)
        return self


def diff_states(
    before: MaterializedState,
    after: MaterializedState,
    excluded_pids: Collection[int] = (),
) -> tuple[dict[str, int], dict[int, int]]:
    """Set-difference of two materialized states, as fold-compatible codes."""
    changed_paths: dict[str, int] = {}
    for p in before.paths.keys() | after.paths.keys():
        b = before.paths.get(p)
        a = after.paths.get(p)
        if b is None and a is not None:
            changed_paths[p] = PATH_CREATED
        elif b is not None and a is None:
            changed_paths[p] = PATH_DELETED
        elif b is not None and a is not None and b != a:
            changed_paths[p] = PATH_MODIFIED

    proc_delta: dict[int, int] = {}
    for pid in before.procs.keys() | after.procs.keys():
        if pid in excluded_pids:
            continue
        b_rec = before.procs.get(pid)
        a_rec = after.procs.get(pid)
        if b_rec is None and a_rec is not None:
            proc_delta[pid] = PROC_SPAWNED
        elif b_rec is not None and a_rec is None:
            proc_delta[pid] = PROC_EXITED
        elif b_rec is not None and a_rec is not None:
            if b_rec[0] != a_rec[0]:
                proc_delta[pid] = PROC_SPAWNED
            elif b_rec[1] != a_rec[1]:
                proc_delta[pid] = PROC_DIRTIED

    return dict(sorted(changed_paths.items())), dict(sorted(proc_delta.items()))
