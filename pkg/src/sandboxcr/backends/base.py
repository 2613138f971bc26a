"""Backend interface: how the engine captures and restores sandbox state.

Real CRIU/ZFS/runc adapters are a documented extension point; the two
backends shipped here are the portable content-addressed one (real bytes,
correctness tests) and the simulated one (latency modeling, density
experiments). Both must satisfy round-trip identity: snapshot then restore
onto a fresh target reproduces state exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from .content_store import TreeEntry

RegistrySnapshot = dict[int, tuple[str, int, bool]]  # pid -> (label, footprint_bytes, dirty)


@runtime_checkable
class SnapshotTarget(Protocol):
    """What a backend needs from a sandbox."""

    sandbox_id: str

    def tree_entries(self) -> list[TreeEntry]: ...

    def apply_tree(self, entries: list[TreeEntry]) -> None: ...

    def registry_snapshot(self) -> RegistrySnapshot: ...

    def replace_registry(self, registry: RegistrySnapshot) -> None: ...


@dataclass(frozen=True)
class BackendArtifact:
    """Handle plus logical size for one produced dump."""

    handle: str
    size_bytes: int


class CheckpointBackend(Protocol):
    name: str

    def snapshot_fs(self, sandbox: SnapshotTarget) -> BackendArtifact: ...

    def snapshot_proc(self, sandbox: SnapshotTarget) -> BackendArtifact: ...

    def restore_fs(self, handle: str, target: SnapshotTarget) -> None: ...

    def restore_proc(self, handle: str, target: SnapshotTarget) -> None: ...

    def artifact_size(self, handle: str) -> int: ...
