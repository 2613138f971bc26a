"""Versioned manifest store.

A manifest is a published recovery point: one process artifact paired with
one filesystem artifact. The on-disk layout is a directory per sandbox with
append-only JSONL index files (`manifests.jsonl`, `artifacts.jsonl`); every
index write goes to a temp file and is renamed into place, so a reader never
observes a torn index. Only Done manifests are ever written.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..errors import UnknownSandbox, UnknownVersion


@dataclass(frozen=True)
class ArtifactRecord:
    artifact_id: str
    kind: str  # "proc" | "fs"
    sandbox_id: str
    turn_index: int
    backend_handle: str
    logical_size_bytes: int
    created_at: float

    def to_json(self) -> dict:
        return {
            "artifact_id": self.artifact_id,
            "kind": self.kind,
            "sandbox_id": self.sandbox_id,
            "turn_index": self.turn_index,
            "backend_handle": self.backend_handle,
            "logical_size_bytes": self.logical_size_bytes,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "ArtifactRecord":
        return cls(**rec)


@dataclass(frozen=True)
class CheckpointManifest:
    """Version `C_i` pairing process artifact `P_j` with fs artifact `F_k`.

    `proc_turn`/`fs_turn` are the turns the artifacts were dumped at;
    `covers_turn` is the turn of the job that published this version (its
    state is current through that turn even when one artifact is older).
    """

    sandbox_id: str
    version_id: int
    proc_artifact: ArtifactRecord
    fs_artifact: ArtifactRecord
    proc_turn: int
    fs_turn: int
    covers_turn: int
    parent_version: Optional[int]

    def to_json(self) -> dict:
        return {
            "version_id": self.version_id,
            "proc_artifact": self.proc_artifact.artifact_id,
            "fs_artifact": self.fs_artifact.artifact_id,
            "proc_turn": self.proc_turn,
            "fs_turn": self.fs_turn,
            "covers_turn": self.covers_turn,
            "parent_version": self.parent_version,
        }


_SAFE_ID = re.compile(r"[^A-Za-z0-9._-]")


def _dir_name(sandbox_id: str) -> str:
    return _SAFE_ID.sub("_", sandbox_id)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w") as fp:
        fp.write(text)
        fp.flush()
        os.fsync(fp.fileno())
    os.rename(tmp, path)


class ManifestStore:
    """Disk-backed store; keeps an in-memory mirror for fast reads."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._manifests: dict[str, list[CheckpointManifest]] = {}
        self._artifacts: dict[str, ArtifactRecord] = {}
        self._load()

    def _sandbox_dir(self, sandbox_id: str) -> Path:
        return self.root / _dir_name(sandbox_id)

    def _load(self) -> None:
        for sub in sorted(self.root.iterdir()) if self.root.exists() else []:
            art_file = sub / "artifacts.jsonl"
            man_file = sub / "manifests.jsonl"
            if not man_file.exists():
                continue
            arts: dict[str, ArtifactRecord] = {}
            if art_file.exists():
                for line in art_file.read_text().splitlines():
                    if line.strip():
                        rec = ArtifactRecord.from_json(json.loads(line))
                        arts[rec.artifact_id] = rec
            self._artifacts.update(arts)
            manifests = []
            sandbox_id = None
            for line in man_file.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                sandbox_id = rec.get("sandbox_id")
                manifests.append(
                    CheckpointManifest(
                        sandbox_id=sandbox_id,
                        version_id=rec["version_id"],
                        proc_artifact=arts[rec["proc_artifact"]],
                        fs_artifact=arts[rec["fs_artifact"]],
                        proc_turn=rec["proc_turn"],
                        fs_turn=rec["fs_turn"],
                        covers_turn=rec["covers_turn"],
                        parent_version=rec["parent_version"],
                    )
                )
            if sandbox_id is not None:
                self._manifests[sandbox_id] = manifests

    def register_sandbox(self, sandbox_id: str) -> None:
        with self._lock:
            self._manifests.setdefault(sandbox_id, [])
            self._sandbox_dir(sandbox_id).mkdir(parents=True, exist_ok=True)

    def known(self, sandbox_id: str) -> bool:
        return sandbox_id in self._manifests

    def next_version_id(self, sandbox_id: str) -> int:
        with self._lock:
            versions = self._manifests.get(sandbox_id)
            if versions is None:
                raise UnknownSandbox(sandbox_id)
            return versions[-1].version_id + 1 if versions else 0

    def latest(self, sandbox_id: str) -> Optional[CheckpointManifest]:
        with self._lock:
            versions = self._manifests.get(sandbox_id)
            if versions is None:
                raise UnknownSandbox(sandbox_id)
            return versions[-1] if versions else None

    def publish(self, manifest: CheckpointManifest, new_artifacts: list[ArtifactRecord]) -> None:
        """Persist artifacts then the manifest row; in-memory view updates
        only after both index writes land."""
        with self._lock:
            sandbox_id = manifest.sandbox_id
            if sandbox_id not in self._manifests:
                raise UnknownSandbox(sandbox_id)
            sub = self._sandbox_dir(sandbox_id)
            sub.mkdir(parents=True, exist_ok=True)
            for art in new_artifacts:
                self._artifacts[art.artifact_id] = art
            art_rows = [self._artifacts[a] for a in sorted(self._artifacts) if self._artifacts[a].sandbox_id == sandbox_id]
            _atomic_write(
                sub / "artifacts.jsonl",
                "".join(json.dumps(a.to_json(), sort_keys=True) + "\n" for a in art_rows),
            )
            rows = self._manifests[sandbox_id] + [manifest]
            _atomic_write(
                sub / "manifests.jsonl",
                "".join(
                    json.dumps({"sandbox_id": m.sandbox_id, **m.to_json()}, sort_keys=True) + "\n"
                    for m in rows
                ),
            )
            self._manifests[sandbox_id] = rows

    def list_versions(self, sandbox_id: str) -> list[CheckpointManifest]:
        with self._lock:
            versions = self._manifests.get(sandbox_id)
            if versions is None:
                raise UnknownSandbox(sandbox_id)
            return list(versions)

    def get(self, sandbox_id: str, version_id: int) -> CheckpointManifest:
        for m in self.list_versions(sandbox_id):
            if m.version_id == version_id:
                return m
        raise UnknownVersion(f"{sandbox_id} v{version_id}")

    def sandboxes(self) -> list[str]:
        with self._lock:
            return sorted(self._manifests)
