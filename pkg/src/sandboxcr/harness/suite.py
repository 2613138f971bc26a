"""Prebuilt experiment suites.

`make_recovery_suite` builds the crash-recovery workload: tasks shaped so a
seeded random crash exercises fast-forward (an in-sandbox restore whose
manifest pairs an old process artifact with a newer filesystem artifact),
command reissue (agent-with-a-sandbox), and the plain rollback path.
"""

from __future__ import annotations

import random

from ..coordinator import AgentMode
from ..netchange import CheckpointClass
from .faults import FaultPlan
from .trace import Trace, gen_task_with_classes

_SKIP = CheckpointClass.SKIP
_FS = CheckpointClass.FS_ONLY
_PROC = CheckpointClass.PROC_ONLY
_FULL = CheckpointClass.FULL


def make_recovery_suite(
    n_fast_forward: int = 20,
    n_reissue: int = 20,
    n_plain: int = 10,
    turns: int = 12,
    seed: int = 1234,
    wait_median_ms: float = 50.0,
) -> tuple[Trace, FaultPlan]:
    """Desk-scale crash suite; short waits keep the portable-backend run fast."""
    rng = random.Random(seed)
    tasks = []
    plan = FaultPlan(seed=seed)

    for i in range(n_fast_forward):
        # full at 0, then fs-only/skip: the latest manifest at any later crash
        # pairs P(turn 0) with a newer F, forcing fast-forward on restore
        classes = [_FULL, _FS] + [
            rng.choice((_FS, _SKIP, _SKIP)) for _ in range(turns - 2)
        ]
        task = gen_task_with_classes(
            f"ff{i:03d}", AgentMode.IN_SANDBOX, classes, seed=seed * 31 + i,
            wait_median_ms=wait_median_ms,
        )
        tasks.append(task)
        plan.crash_turns[task.task_id] = rng.randint(2, turns - 1)

    for i in range(n_reissue):
        classes = [_FULL] + [
            rng.choice((_SKIP, _SKIP, _FS, _PROC, _FULL)) for _ in range(turns - 1)
        ]
        task = gen_task_with_classes(
            f"re{i:03d}", AgentMode.WITH_SANDBOX, classes, seed=seed * 47 + i,
            wait_median_ms=wait_median_ms,
        )
        tasks.append(task)
        plan.crash_turns[task.task_id] = rng.randint(1, turns - 1)

    for i in range(n_plain):
        classes = [rng.choice((_SKIP, _SKIP, _FS, _PROC, _FULL)) for _ in range(turns)]
        task = gen_task_with_classes(
            f"pl{i:03d}", AgentMode.IN_SANDBOX, classes, seed=seed * 61 + i,
            wait_median_ms=wait_median_ms,
        )
        tasks.append(task)
        plan.crash_turns[task.task_id] = rng.randint(0, turns - 1)

    meta = {"suite": "recovery", "seed": seed, "turns": turns}
    return Trace(tasks=tasks, meta=meta), plan
