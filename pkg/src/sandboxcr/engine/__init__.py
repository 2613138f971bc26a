from .core import Engine, FaultInjector, RestoreReport, INITIAL_TURN
from .drivers import VirtualWorkerDriver, WorkerThreadPool, default_worker_count
from .jobs import CheckpointJob, Lifecycle, Priority
from .scheduler import TwoQueueScheduler
from .store import ArtifactRecord, CheckpointManifest, ManifestStore

__all__ = [
    "ArtifactRecord",
    "CheckpointJob",
    "CheckpointManifest",
    "Engine",
    "FaultInjector",
    "INITIAL_TURN",
    "Lifecycle",
    "ManifestStore",
    "Priority",
    "RestoreReport",
    "TwoQueueScheduler",
    "VirtualWorkerDriver",
    "WorkerThreadPool",
    "default_worker_count",
]
