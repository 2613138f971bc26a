"""Net-change reports, checkpoint classes, and fold-kernel selection.

The compiled kernel is preferred when its extension built; setting
``SANDBOXCR_PURE_PYTHON=1`` forces the pure-Python fold (used by the
benchmark and by CI environments without a compiler).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum

from . import _netchange_py
from ._netchange_py import (  # re-exported op/error codes -- shared boundary
    OP_FS_CREATE,
    OP_FS_DELETE,
    OP_FS_RENAME,
    OP_FS_WRITE,
    OP_PROC_DIRTY,
    OP_PROC_EXIT,
    OP_PROC_SPAWN,
    PATH_CREATED,
    PATH_DELETED,
    PATH_MODIFIED,
    PROC_DIRTIED,
    PROC_EXITED,
    PROC_SPAWNED,
)

if os.environ.get("SANDBOXCR_PURE_PYTHON"):
    fold_interval = _netchange_py.fold_interval
    KERNEL_IMPL = "python"
else:
    try:
        from ._netchange_cy import fold_interval  # type: ignore[no-redef]

        KERNEL_IMPL = "cython"
    except ImportError:
        fold_interval = _netchange_py.fold_interval
        KERNEL_IMPL = "python"


class PathChange(Enum):
    CREATED = PATH_CREATED
    DELETED = PATH_DELETED
    MODIFIED = PATH_MODIFIED


class ProcChange(Enum):
    SPAWNED = PROC_SPAWNED
    EXITED = PROC_EXITED
    DIRTIED_MEMORY = PROC_DIRTIED


class CheckpointClass(Enum):
    SKIP = "skip"
    FS_ONLY = "fs_only"
    PROC_ONLY = "proc_only"
    FULL = "full"


# cost order used by the engine's latency model
CLASS_COST_ORDER = (
    CheckpointClass.SKIP,
    CheckpointClass.FS_ONLY,
    CheckpointClass.PROC_ONLY,
    CheckpointClass.FULL,
)


@dataclass(frozen=True)
class NetChangeReport:
    """Net recovery-relevant change of one sandbox since its baseline."""

    sandbox_id: str
    as_of_seq: int
    changed_paths: dict[str, PathChange] = field(default_factory=dict)
    proc_delta: dict[int, ProcChange] = field(default_factory=dict)

    @property
    def fs_changed(self) -> bool:
        return bool(self.changed_paths)

    @property
    def proc_changed(self) -> bool:
        return bool(self.proc_delta)


def classify(report: NetChangeReport) -> CheckpointClass:
    """Map a net-change report to its checkpoint granularity. Pure."""
    if report.fs_changed:
        return CheckpointClass.FULL if report.proc_changed else CheckpointClass.FS_ONLY
    return CheckpointClass.PROC_ONLY if report.proc_changed else CheckpointClass.SKIP


def report_from_codes(
    sandbox_id: str,
    as_of_seq: int,
    changed_paths: dict[str, int],
    proc_delta: dict[int, int],
) -> NetChangeReport:
    return NetChangeReport(
        sandbox_id=sandbox_id,
        as_of_seq=as_of_seq,
        changed_paths={p: PathChange(c) for p, c in changed_paths.items()},
        proc_delta={pid: ProcChange(c) for pid, c in proc_delta.items()},
    )
