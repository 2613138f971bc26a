"""Portable real-bytes backend over the content-addressed store.

Stands in for the ZFS/CRIU pair at file granularity: filesystem snapshots
are content-addressed tree manifests (unchanged files cost index entries
only), process snapshots serialize the sandbox registry wholesale.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import CorruptArtifact
from .base import BackendArtifact, RegistrySnapshot, SnapshotTarget
from .content_store import BlobStore, parse_tree, serialize_tree, TreeEntry, hash_bytes


class PortableBackend:
    name = "portable"

    def __init__(self, root: Path) -> None:
        self.store = BlobStore(Path(root))

    # -- snapshot -----------------------------------------------------------

    def snapshot_fs(self, sandbox: SnapshotTarget) -> BackendArtifact:
        rows = []
        total = 0
        for path, kind, mode, payload in sandbox.tree_entries():
            if kind == "d":
                rows.append((path, kind, mode, "-"))
            else:
                rows.append((path, kind, mode, self.store.put(payload)))
                total += len(payload)
        manifest = serialize_tree(rows).encode()
        digest = self.store.put(manifest)
        return BackendArtifact(handle=f"tree:{digest}", size_bytes=total)

    def snapshot_proc(self, sandbox: SnapshotTarget) -> BackendArtifact:
        registry = sandbox.registry_snapshot()
        payload = json.dumps(
            {str(pid): list(entry) for pid, entry in sorted(registry.items())},
            sort_keys=True,
        ).encode()
        digest = self.store.put(payload)
        size = sum(entry[1] for entry in registry.values())
        return BackendArtifact(handle=f"proc:{digest}", size_bytes=size)

    # -- restore ------------------------------------------------------------

    def restore_fs(self, handle: str, target: SnapshotTarget) -> None:
        entries: list[TreeEntry] = []
        for path, kind, mode, digest in parse_tree(self._load(handle, "tree").decode()):
            payload = b"" if kind == "d" else self.store.get(digest)
            entries.append((path, kind, mode, payload))
        target.apply_tree(entries)

    def restore_proc(self, handle: str, target: SnapshotTarget) -> None:
        raw = json.loads(self._load(handle, "proc"))
        registry: RegistrySnapshot = {
            int(pid): (entry[0], int(entry[1]), bool(entry[2])) for pid, entry in raw.items()
        }
        target.replace_registry(registry)

    def artifact_size(self, handle: str) -> int:
        kind, _, digest = handle.partition(":")
        if kind == "proc":
            raw = json.loads(self.store.get(digest))
            return sum(int(entry[1]) for entry in raw.values())
        rows = parse_tree(self.store.get(digest).decode())
        return sum(
            len(self.store.get(h)) for _, k, _, h in rows if k != "d"
        )

    def _load(self, handle: str, expect: str) -> bytes:
        kind, _, digest = handle.partition(":")
        if kind != expect or not digest:
            raise CorruptArtifact(f"handle {handle!r} is not a {expect} artifact")
        return self.store.get(digest)

    def blob_count(self) -> int:
        return self.store.count()


class DirWorkspace:
    """Adapter exposing a plain directory (plus a registry sidecar file) as a
    snapshot target. Used by the CLI restore path and by round-trip tests."""

    def __init__(self, sandbox_id: str, root: Path) -> None:
        self.sandbox_id = sandbox_id
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._registry_file = self.root.parent / f"{self.root.name}.registry.json"

    def tree_entries(self) -> list[TreeEntry]:
        from .content_store import walk_dir_entries

        return walk_dir_entries(self.root)

    def apply_tree(self, entries: list[TreeEntry]) -> None:
        from .content_store import materialize_dir

        materialize_dir(self.root, entries)

    def registry_snapshot(self) -> RegistrySnapshot:
        if not self._registry_file.exists():
            return {}
        raw = json.loads(self._registry_file.read_text())
        return {int(pid): (e[0], int(e[1]), bool(e[2])) for pid, e in raw.items()}

    def replace_registry(self, registry: RegistrySnapshot) -> None:
        self._registry_file.write_text(
            json.dumps({str(pid): list(e) for pid, e in sorted(registry.items())}, indent=1)
        )

    def tree_hash(self) -> str:
        from .content_store import tree_hash_of_entries

        return tree_hash_of_entries(self.tree_entries())
