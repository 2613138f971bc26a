"""OS-effect events and their stable line encoding.

One event describes a single filesystem or process effect observed inside a
sandbox. The line encoding (JSON, one object per line) is the adapter seam
where a real kernel tracer would plug in; everything downstream of it is
source-agnostic.

Source contract: sequence numbers strictly increase per sandbox; paths are
normalized absolute paths in the sandbox namespace; writes to special file
handles (stdout/stderr and friends) are filtered out by the event source and
never emitted; recursive deletes are emitted per path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, TextIO, Union

from .errors import TraceParse


def normalize_path(path: str) -> str:
    """Validate and normalize a sandbox-namespace path.

    Paths are absolute, contain no `..` components, and carry no trailing
    slash except for the root itself.
    """
    if not path.startswith("/"):
        raise ValueError(f"sandbox path must be absolute: {path!r}")
    if path != "/" and path.endswith("/"):
        path = path.rstrip("/")
        if not path:
            path = "/"
    parts = path.split("/")
    if ".." in parts or "." in parts[1:]:
        raise ValueError(f"sandbox path must be normalized: {path!r}")
    return path


@dataclass(frozen=True)
class FsCreate:
    path: str


@dataclass(frozen=True)
class FsDelete:
    path: str


@dataclass(frozen=True)
class FsRename:
    old_path: str
    new_path: str


@dataclass(frozen=True)
class FsWrite:
    path: str


@dataclass(frozen=True)
class ProcSpawn:
    pid: int
    is_agent: bool = False


@dataclass(frozen=True)
class ProcExit:
    pid: int


@dataclass(frozen=True)
class ProcDirty:
    pid: int


Payload = Union[FsCreate, FsDelete, FsRename, FsWrite, ProcSpawn, ProcExit, ProcDirty]


@dataclass(frozen=True)
class OsEvent:
    sandbox_id: str
    seq: int
    payload: Payload


_KIND_NAMES = {
    FsCreate: "fs_create",
    FsDelete: "fs_delete",
    FsRename: "fs_rename",
    FsWrite: "fs_write",
    ProcSpawn: "proc_spawn",
    ProcExit: "proc_exit",
    ProcDirty: "proc_dirty",
}


def encode_event(event: OsEvent) -> str:
    """Encode one event as a single JSON line (no trailing newline)."""
    p = event.payload
    rec: dict = {"sandbox": event.sandbox_id, "seq": event.seq, "kind": _KIND_NAMES[type(p)]}
    if isinstance(p, (FsCreate, FsDelete, FsWrite)):
        rec["path"] = p.path
    elif isinstance(p, FsRename):
        rec["old_path"] = p.old_path
        rec["new_path"] = p.new_path
    elif isinstance(p, ProcSpawn):
        rec["pid"] = p.pid
        if p.is_agent:
            rec["is_agent"] = True
    else:
        rec["pid"] = p.pid
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def decode_event(line: str) -> OsEvent:
    try:
        rec = json.loads(line)
        kind = rec["kind"]
        sandbox = rec["sandbox"]
        seq = int(rec["seq"])
        payload: Payload
        if kind == "fs_create":
            payload = FsCreate(normalize_path(rec["path"]))
        elif kind == "fs_delete":
            payload = FsDelete(normalize_path(rec["path"]))
        elif kind == "fs_write":
            payload = FsWrite(normalize_path(rec["path"]))
        elif kind == "fs_rename":
            payload = FsRename(normalize_path(rec["old_path"]), normalize_path(rec["new_path"]))
        elif kind == "proc_spawn":
            payload = ProcSpawn(int(rec["pid"]), bool(rec.get("is_agent", False)))
        elif kind == "proc_exit":
            payload = ProcExit(int(rec["pid"]))
        elif kind == "proc_dirty":
            payload = ProcDirty(int(rec["pid"]))
        else:
            raise TraceParse(f"unknown event kind {kind!r}")
    except (KeyError, ValueError, TypeError) as exc:
        raise TraceParse(f"bad event line: {line!r}") from exc
    return OsEvent(sandbox, seq, payload)


def read_event_log(fp: Union[TextIO, Iterable[str]]) -> Iterator[OsEvent]:
    """Yield events from a line-delimited log, skipping blank lines."""
    for line in fp:
        line = line.strip()
        if line:
            yield decode_event(line)
