"""Content-addressed blob store and canonical tree manifests.

Blobs live under ``blobs/<hash[:2]>/<hash>`` and are written temp-then-rename
so concurrent writers are safe (duplicate writes are benign). Tree manifests
are line-delimited ``kind mode hash path`` records sorted by path; hashing the
canonical manifest text gives a stable tree hash.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

from ..errors import CorruptArtifact, IoFailure

HASH_ALGO = "sha256"

# entry kinds: f regular file, d directory, l symlink
TreeEntry = tuple[str, str, int, bytes]  # (path, kind, mode, payload)


def hash_bytes(data: bytes) -> str:
    return hashlib.new(HASH_ALGO, data).hexdigest()


class BlobStore:
    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.blob_dir = self.root / "blobs"
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        meta = self.root / "store.json"
        if meta.exists():
            recorded = json.loads(meta.read_text())["hash"]
            if recorded != HASH_ALGO:
                raise IoFailure(f"store hashed with {recorded}, runtime uses {HASH_ALGO}")
        else:
            meta.write_text(json.dumps({"hash": HASH_ALGO}) + "\n")

    def _path(self, digest: str) -> Path:
        return self.blob_dir / digest[:2] / digest

    def put(self, data: bytes) -> str:
        digest = hash_bytes(data)
        dest = self._path(digest)
        if dest.exists():
            return digest
        dest.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=dest.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fp:
                fp.write(data)
            os.rename(tmp, dest)
        except OSError as exc:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise IoFailure(str(exc)) from exc
        return digest

    def get(self, digest: str) -> bytes:
        try:
            data = self._path(digest).read_bytes()
        except OSError as exc:
            raise CorruptArtifact(f"missing blob {digest}") from exc
        if hash_bytes(data) != digest:
            raise CorruptArtifact(f"blob {digest} content mismatch")
        return data

    def has(self, digest: str) -> bool:
        return self._path(digest).exists()

    def count(self) -> int:
        return sum(1 for d in self.blob_dir.iterdir() for _ in d.iterdir()) if self.blob_dir.exists() else 0


def serialize_tree(entries: Iterable[tuple[str, str, int, str]]) -> str:
    """Canonical manifest text from (path, kind, mode, payload_hash) rows."""
    lines = []
    for path, kind, mode, digest in sorted(entries):
        lines.append(f"{kind} {mode:o} {digest} {path}")
    return "".join(line + "\n" for line in lines)


def parse_tree(text: str) -> list[tuple[str, str, int, str]]:
    rows = []
    for line in text.splitlines():
        if not line:
            continue
        try:
            kind, mode_s, digest, path = line.split(" ", 3)
            rows.append((path, kind, int(mode_s, 8), digest))
        except ValueError as exc:
            raise CorruptArtifact(f"bad manifest line {line!r}") from exc
    return rows


def tree_hash_of_entries(entries: Iterable[TreeEntry]) -> str:
    """Hash of a workspace's content: payloads plus layout and modes."""
    rows = [
        (path, kind, mode, hash_bytes(payload) if kind != "d" else "-")
        for path, kind, mode, payload in entries
    ]
    return hash_bytes(serialize_tree(rows).encode())


# --- real-directory walk / materialize ------------------------------------


def walk_dir_entries(root: Path) -> list[TreeEntry]:
    """Workspace entries of a real directory, sandbox-namespace paths."""
    root = Path(root)
    entries: list[TreeEntry] = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        rel_dir = os.path.relpath(dirpath, root)
        base = "" if rel_dir == "." else "/" + rel_dir.replace(os.sep, "/")
        if base:
            st = os.lstat(dirpath)
            entries.append((base, "d", st.st_mode & 0o7777, b""))
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            st = os.lstat(full)
            path = f"{base}/{name}"
            if os.path.islink(full):
                entries.append((path, "l", st.st_mode & 0o7777, os.readlink(full).encode()))
            else:
                with open(full, "rb") as fp:
                    entries.append((path, "f", st.st_mode & 0o7777, fp.read()))
        dirnames.sort()
    entries.sort()
    return entries


def materialize_dir(root: Path, entries: list[TreeEntry]) -> None:
    """Make `root` contain exactly `entries`, removing extraneous files."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    wanted = {path for path, _, _, _ in entries}
    # delete bottom-up anything not wanted
    for dirpath, dirnames, filenames in os.walk(root, topdown=False, followlinks=False):
        rel_dir = os.path.relpath(dirpath, root)
        base = "" if rel_dir == "." else "/" + rel_dir.replace(os.sep, "/")
        for name in filenames:
            if f"{base}/{name}" not in wanted:
                os.unlink(os.path.join(dirpath, name))
        if base and base not in wanted and not os.listdir(dirpath):
            os.rmdir(dirpath)
    for path, kind, mode, payload in sorted(entries):
        full = root / path.lstrip("/")
        if kind == "d":
            full.mkdir(parents=True, exist_ok=True)
            os.chmod(full, mode)
            continue
        full.parent.mkdir(parents=True, exist_ok=True)
        if kind == "l":
            if full.is_symlink() or full.exists():
                full.unlink()
            os.symlink(payload.decode(), full)
        else:
            if full.is_symlink():
                full.unlink()
            with open(full, "wb") as fp:
                fp.write(payload)
            os.chmod(full, mode)
