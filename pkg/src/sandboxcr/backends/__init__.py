from .base import BackendArtifact, CheckpointBackend, RegistrySnapshot, SnapshotTarget
from .content_store import BlobStore, tree_hash_of_entries, walk_dir_entries
from .portable import DirWorkspace, PortableBackend
from .simulated import LatencyModel, SharedBandwidth, SimulatedBackend

__all__ = [
    "BackendArtifact",
    "BlobStore",
    "CheckpointBackend",
    "DirWorkspace",
    "LatencyModel",
    "PortableBackend",
    "RegistrySnapshot",
    "SharedBandwidth",
    "SimulatedBackend",
    "SnapshotTarget",
    "tree_hash_of_entries",
    "walk_dir_entries",
]
