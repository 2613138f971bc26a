"""Deterministic sandbox stand-in.

A sandbox is a workspace (a real directory, or an in-memory tree for
high-density simulation) plus a process registry. Scripted tool actions
mutate it; every mutation emits exactly one OS-effect event before the next
action runs, which is what closes the loop between the inspector's view and
the actual state.

Crash semantics: the registry is lost and the workspace is marked invalid
(the bytes survive, as a killed container's disk would); any further action
raises until a restore rewrites the state wholesale.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

from .backends.base import RegistrySnapshot
from .backends.content_store import TreeEntry, materialize_dir, tree_hash_of_entries, walk_dir_entries
from .errors import PathConflict, SandboxCrashed
from .events import (
    FsCreate,
    FsDelete,
    FsRename,
    FsWrite,
    OsEvent,
    Payload,
    ProcDirty,
    ProcExit,
    ProcSpawn,
    normalize_path,
)

FILE_MODE = 0o644
DIR_MODE = 0o755


@dataclass(frozen=True)
class WriteFile:
    path: str
    data: bytes


@dataclass(frozen=True)
class CreateFile:
    path: str
    data: bytes = b""


@dataclass(frozen=True)
class DeleteFile:
    path: str


@dataclass(frozen=True)
class RenameFile:
    old_path: str
    new_path: str


@dataclass(frozen=True)
class SpawnProc:
    pid: int
    label: str = "proc"
    footprint: int = 64_000_000
    is_agent: bool = False


@dataclass(frozen=True)
class KillProc:
    pid: int


@dataclass(frozen=True)
class TouchMemory:
    pid: int


@dataclass(frozen=True)
class Sleep:
    seconds: float


@dataclass(frozen=True)
class ReadFile:
    path: str


ToolAction = Union[
    WriteFile, CreateFile, DeleteFile, RenameFile, SpawnProc, KillProc, TouchMemory, Sleep, ReadFile
]


class SimSandbox:
    def __init__(
        self,
        sandbox_id: str,
        root: Optional[Path] = None,
        emit: Optional[Callable[[OsEvent], None]] = None,
        initial_procs: Optional[dict[int, tuple[str, int]]] = None,
    ) -> None:
        self.sandbox_id = sandbox_id
        self.root = Path(root) if root is not None else None
        self.emit = emit or (lambda event: None)
        self.registry: dict[int, tuple[str, int, bool]] = {
            pid: (label, footprint, False)
            for pid, (label, footprint) in sorted((initial_procs or {}).items())
        }
        self.agent_pid: Optional[int] = None
        self.next_seq = 1
        self.alive = True
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._files: Optional[dict[str, bytes]] = None
            self._dirs: Optional[set[str]] = None
        else:
            self._files = {}
            self._dirs = set()

    # -- event plumbing -------------------------------------------------------

    def _emit(self, payload: Payload) -> None:
        event = OsEvent(self.sandbox_id, self.next_seq, payload)
        self.next_seq += 1
        self.emit(event)

    def spawn_agent(self, pid: int, label: str = "agent", footprint: int = 185_000_000) -> None:
        """Start the in-sandbox agent process; its spawn event is flagged so
        the inspector excludes it from process tracking."""
        if pid in self.registry:
            raise PathConflict(f"pid {pid} already live")
        self.registry[pid] = (label, footprint, False)
        self.agent_pid = pid
        self._emit(ProcSpawn(pid, is_agent=True))

    # -- tool actions ------------------------------------------------------------

    def apply(self, actions: list[ToolAction]) -> int:
        """Apply actions in order; one event per mutation; returns count."""
        applied = 0
        for action in actions:
            self.apply_one(action)
            applied += 1
        return applied

    def apply_one(self, action: ToolAction) -> None:
        if not self.alive:
            raise SandboxCrashed(self.sandbox_id)
        if isinstance(action, Sleep):
            return  # duration is the harness's business; no OS effect
        if isinstance(action, ReadFile):
            path = normalize_path(action.path)
            if not self._exists(path):
                raise PathConflict(f"read of missing {path}")
            return
        if isinstance(action, CreateFile):
            path = normalize_path(action.path)
            if self._exists(path):
                raise PathConflict(f"create over existing {path}")
            self._ensure_parents(path)
            self._write_file(path, action.data)
            self._emit(FsCreate(path))
        elif isinstance(action, WriteFile):
            path = normalize_path(action.path)
            if not self._is_file(path):
                raise PathConflict(f"write to missing file {path}")
            self._write_file(path, action.data)
            self._emit(FsWrite(path))
        elif isinstance(action, DeleteFile):
            path = normalize_path(action.path)
            if self._is_file(path):
                self._remove_file(path)
            elif self._is_dir(path):
                if self._dir_children(path):
                    raise PathConflict(f"delete of non-empty directory {path}")
                self._remove_dir(path)
            else:
                raise PathConflict(f"delete of missing {path}")
            self._emit(FsDelete(path))
        elif isinstance(action, RenameFile):
            old = normalize_path(action.old_path)
            new = normalize_path(action.new_path)
            if not self._is_file(old):
                raise PathConflict(f"rename of missing file {old}")
            if self._exists(new):
                raise PathConflict(f"rename onto existing {new}")
            self._ensure_parents(new)
            data = self._read_file(old)
            self._remove_file(old)
            self._write_file(new, data)
            self._emit(FsRename(old, new))
        elif isinstance(action, SpawnProc):
            if action.pid in self.registry:
                raise PathConflict(f"pid {action.pid} already live")
            self.registry[action.pid] = (action.label, action.footprint, False)
            if action.is_agent:
                self.agent_pid = action.pid
            self._emit(ProcSpawn(action.pid, is_agent=action.is_agent))
        elif isinstance(action, KillProc):
            if action.pid not in self.registry:
                raise PathConflict(f"pid {action.pid} not live")
            del self.registry[action.pid]
            self._emit(ProcExit(action.pid))
        elif isinstance(action, TouchMemory):
            if action.pid not in self.registry:
                raise PathConflict(f"pid {action.pid} not live")
            label, footprint, _ = self.registry[action.pid]
            self.registry[action.pid] = (label, footprint, True)
            self._emit(ProcDirty(action.pid))
        else:
            raise TypeError(f"unknown action {action!r}")

    # -- crash / restore -----------------------------------------------------------

    def crash(self) -> None:
        self.registry = {}
        self.alive = False

    def mark_invalid(self) -> None:
        self.alive = False

    def mark_restored(self) -> None:
        self.alive = True

    # -- workspace primitives (real dir or memory tree) ------------------------------

    def _fs_path(self, path: str) -> Path:
        assert self.root is not None
        return self.root / path.lstrip("/")

    def _exists(self, path: str) -> bool:
        if self.root is not None:
            p = self._fs_path(path)
            return p.is_symlink() or p.exists()
        return path in self._files or path in self._dirs

    def _is_file(self, path: str) -> bool:
        if self.root is not None:
            return self._fs_path(path).is_file()
        return path in self._files

    def _is_dir(self, path: str) -> bool:
        if self.root is not None:
            return self._fs_path(path).is_dir()
        return path in self._dirs

    def _dir_children(self, path: str) -> bool:
        if self.root is not None:
            return any(self._fs_path(path).iterdir())
        prefix = path + "/"
        return any(p.startswith(prefix) for p in self._files) or any(
            d.startswith(prefix) for d in self._dirs
        )

    def _ensure_parents(self, path: str) -> None:
        """Create missing parent directories, emitting one event each."""
        parts = path.split("/")[1:-1]
        current = ""
        for part in parts:
            current += "/" + part
            if self._is_file(current):
                raise PathConflict(f"{current} is a file, not a directory")
            if not self._is_dir(current):
                if self.root is not None:
                    self._fs_path(current).mkdir()
                    self._fs_path(current).chmod(DIR_MODE)
                else:
                    self._dirs.add(current)
                self._emit(FsCreate(current))

    def _write_file(self, path: str, data: bytes) -> None:
        if self.root is not None:
            p = self._fs_path(path)
            p.write_bytes(data)
            p.chmod(FILE_MODE)
        else:
            self._files[path] = data

    def _read_file(self, path: str) -> bytes:
        if self.root is not None:
            return self._fs_path(path).read_bytes()
        return self._files[path]

    def _remove_file(self, path: str) -> None:
        if self.root is not None:
            self._fs_path(path).unlink()
        else:
            del self._files[path]

    def _remove_dir(self, path: str) -> None:
        if self.root is not None:
            self._fs_path(path).rmdir()
        else:
            self._dirs.discard(path)

    # -- snapshot-target protocol ------------------------------------------------------

    def tree_entries(self) -> list[TreeEntry]:
        if self.root is not None:
            return walk_dir_entries(self.root)
        entries: list[TreeEntry] = [(d, "d", DIR_MODE, b"") for d in self._dirs]
        entries.extend((p, "f", FILE_MODE, data) for p, data in self._files.items())
        entries.sort()
        return entries

    def apply_tree(self, entries: list[TreeEntry]) -> None:
        if self.root is not None:
            materialize_dir(self.root, entries)
        else:
            self._files = {p: payload for p, kind, _, payload in entries if kind == "f"}
            self._dirs = {p for p, kind, _, _ in entries if kind == "d"}

    def registry_snapshot(self) -> RegistrySnapshot:
        return dict(self.registry)

    def replace_registry(self, registry: RegistrySnapshot) -> None:
        self.registry = dict(registry)

    # -- views -------------------------------------------------------------------------

    def list_paths(self) -> list[str]:
        return [path for path, _, _, _ in self.tree_entries()]

    def list_pids(self) -> list[int]:
        return sorted(self.registry)

    def tree_hash(self) -> str:
        return tree_hash_of_entries(self.tree_entries())
