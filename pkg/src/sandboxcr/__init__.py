"""sandboxcr: turn-aware checkpoint/restore runtime for agent sandboxes.

Infers per-turn checkpoint granularity from OS-visible effect streams,
overlaps checkpoint work with LLM wait windows, schedules checkpoint traffic
across co-located sandboxes, and maintains versioned transactional recovery
manifests.
"""

from .coordinator import AgentMode, Coordinator
from .engine import Engine, ManifestStore
from .inspector import Inspector
from .netchange import KERNEL_IMPL, CheckpointClass, NetChangeReport, classify
from .simsandbox import SimSandbox

__version__ = "0.1.0"

__all__ = [
    "AgentMode",
    "CheckpointClass",
    "Coordinator",
    "Engine",
    "Inspector",
    "KERNEL_IMPL",
    "ManifestStore",
    "NetChangeReport",
    "SimSandbox",
    "classify",
    "__version__",
]
