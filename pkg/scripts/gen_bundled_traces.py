#!/usr/bin/env python3
"""Regenerate the traces shipped under src/sandboxcr/harness/data/.

heterogeneous: 96 in-sandbox tasks, per-task statefulness varied around the
measured production profile (overall skip ratio > 70%); memory footprints are
a base/burst mixture (most tasks near the ~185 MB framework baseline, a
quarter with GB-scale tool bursts). Used by the density/overlap experiments:
at density 16 the exposed-delay fraction stays at zero, at 96 the p95 lands
in the low percents.

stress: 96 longer tasks with a higher stateful share and small fast dumps;
once LLM waits are scaled down, checkpoint arrivals transiently saturate the
worker slots, which is the regime the reactive/FIFO comparison probes.

Both files are deterministic; regenerate only when the workload is meant to
change, and re-run the acceptance suite afterwards.
"""

from __future__ import annotations

import math
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from sandboxcr.coordinator import AgentMode
from sandboxcr.harness.trace import Trace, TraceGenSpec, _class_counts, gen_task_with_classes
from sandboxcr.netchange import CheckpointClass

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "sandboxcr" / "harness" / "data"

# per-task profile buckets: (stateless, fs, proc) fractions; full is the rest
HETERO_PROFILES = [
    (0.75, 0.15, 0.05),
    (0.80, 0.10, 0.05),
    (0.85, 0.075, 0.025),
    (0.725, 0.20, 0.025),
    (0.875, 0.05, 0.05),
    (0.75, 0.125, 0.075),
]

STRESS_PROFILE = (0.62, 0.24, 0.14)


def classes_for(profile, turns, rng):
    stateless, fs, proc = profile
    spec = TraceGenSpec(
        tasks=1, turns=turns, stateless_fraction=stateless, fs_fraction=fs, proc_fraction=proc
    )
    counts = _class_counts(spec)
    classes = [k for k, c in counts.items() for _ in range(c)]
    rng.shuffle(classes)
    return classes


def build_heterogeneous(seed: int = 20260401, tasks: int = 96, turns: int = 40) -> Trace:
    out = []
    for i in range(tasks):
        rng = random.Random(seed * 7 + i)
        if rng.random() < 0.25:  # tool-driven memory burst tasks
            footprint = int(rng.lognormvariate(math.log(1.2e9), 0.45))
        else:
            footprint = int(rng.lognormvariate(math.log(185e6), 0.6))
        out.append(
            gen_task_with_classes(
                f"t{i:03d}",
                AgentMode.IN_SANDBOX,
                classes_for(HETERO_PROFILES[i % len(HETERO_PROFILES)], turns, random.Random(seed * 131 + i)),
                seed=seed * 977 + i,
                footprint_median=footprint,
                footprint_sigma=0.0,
            )
        )
    return Trace(tasks=out, meta={"bundled": "heterogeneous", "seed": seed, "turns": turns})


def build_stress(seed: int = 20260402, tasks: int = 96, turns: int = 64) -> Trace:
    out = []
    for i in range(tasks):
        out.append(
            gen_task_with_classes(
                f"t{i:03d}",
                AgentMode.IN_SANDBOX,
                classes_for(STRESS_PROFILE, turns, random.Random(seed * 131 + i)),
                seed=seed * 977 + i,
                footprint_median=35_000_000,
                footprint_sigma=0.5,
                wait_sigma=1.0,
            )
        )
    return Trace(tasks=out, meta={"bundled": "stress", "seed": seed, "turns": turns})


def main() -> None:
    from sandboxcr.harness.trace import save_trace, validate_annotations

    DATA_DIR.mkdir(parents=True, exist_ok=True)
    for name, trace in (("heterogeneous", build_heterogeneous()), ("stress", build_stress())):
        validate_annotations(trace)
        save_trace(trace, DATA_DIR / f"{name}.jsonl")
        turns = [t.expected_class for task in trace.tasks for t in task.turns]
        skip = sum(1 for c in turns if c is CheckpointClass.SKIP) / len(turns)
        print(f"{name}: {len(trace.tasks)} tasks, {len(turns)} turns, skip ratio {skip:.3f}")


if __name__ == "__main__":
    main()
