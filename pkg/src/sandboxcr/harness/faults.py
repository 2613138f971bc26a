"""Seeded fault plans: crash positions and preemption notices."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .trace import Trace


@dataclass(frozen=True)
class Preemption:
    at_s: float
    grace_s: float = 60.0


@dataclass
class FaultPlan:
    seed: int
    crash_turns: dict[str, int] = field(default_factory=dict)
    preemptions: dict[str, list[Preemption]] = field(default_factory=dict)


def gen_fault_plan(
    trace: Trace,
    seed: int,
    crash_fraction: float = 1.0,
    min_turn: int = 0,
    max_turn: Optional[int] = None,
) -> FaultPlan:
    """One crash per task at a uniformly random turn (reproducible by seed)."""
    rng = random.Random(seed)
    plan = FaultPlan(seed=seed)
    for task in trace.tasks:
        if rng.random() >= crash_fraction:
            continue
        hi = len(task.turns) - 1 if max_turn is None else min(max_turn, len(task.turns) - 1)
        lo = min(min_turn, hi)
        plan.crash_turns[task.task_id] = rng.randint(lo, hi)
    return plan
