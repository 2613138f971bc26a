"""Checkpoint jobs and their lifecycle."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..netchange import CheckpointClass


class Lifecycle(Enum):
    PENDING = "pending"
    DUMPING = "dumping"
    VERSIONING = "versioning"
    DONE = "done"
    FAILED = "failed"


TERMINAL = (Lifecycle.DONE, Lifecycle.FAILED)

# legal transitions; FAILED is reachable from any non-terminal stage
_NEXT = {
    Lifecycle.PENDING: {Lifecycle.DUMPING, Lifecycle.FAILED},
    Lifecycle.DUMPING: {Lifecycle.VERSIONING, Lifecycle.FAILED},
    Lifecycle.VERSIONING: {Lifecycle.DONE, Lifecycle.FAILED},
}


class Priority(Enum):
    NORMAL = "normal"
    HIGH = "high"


@dataclass
class CheckpointJob:
    job_id: str
    sandbox_id: str
    turn_index: int
    klass: CheckpointClass
    up_to_seq: int
    priority: Priority = Priority.NORMAL
    lifecycle: Lifecycle = Lifecycle.PENDING
    enqueue_time: float = 0.0
    start_time: Optional[float] = None
    completion_time: Optional[float] = None
    error: Optional[str] = None
    # artifacts staged by execute(), adopted by publish()
    staged: list = field(default_factory=list)

    def advance(self, to: Lifecycle) -> None:
        allowed = _NEXT.get(self.lifecycle, set())
        if to not in allowed:
            raise ValueError(f"job {self.job_id}: illegal transition {self.lifecycle} -> {to}")
        self.lifecycle = to

    @property
    def terminal(self) -> bool:
        return self.lifecycle in TERMINAL
