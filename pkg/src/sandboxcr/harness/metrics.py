"""Run metrics: per-task accounting, percentiles, CSV emission."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolated percentile, q in [0, 100]. NaN when empty."""
    if not values:
        return math.nan
    data = sorted(values)
    if len(data) == 1:
        return data[0]
    rank = (q / 100.0) * (len(data) - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, len(data) - 1)
    frac = rank - lo
    return data[lo] * (1 - frac) + data[hi] * frac


@dataclass
class TaskMetrics:
    task_id: str
    mode: str
    wall_s: float
    exposed_s: float
    turns: int
    class_counts: dict[str, int]
    synthetic_served: int = 0
    llm_forwards: int = 0
    crash_turn: Optional[int] = None
    preemptions: int = 0
    recovered_ok: Optional[bool] = None
    restore_wall_s: float = 0.0
    restores: list = field(default_factory=list)  # (proc_turn, fs_turn) per restore
    reissued: int = 0
    final_tree_hash: str = ""
    final_registry: dict = field(default_factory=dict)

    @property
    def exposed_fraction(self) -> float:
        return self.exposed_s / self.wall_s if self.wall_s > 0 else 0.0


@dataclass
class RunMetrics:
    config: dict
    tasks: list[TaskMetrics]
    turn_delays: list[float]
    scheduler: dict
    jobs: dict
    completion_order: list[str] = field(default_factory=list)

    def exposed_fractions(self) -> list[float]:
        return [t.exposed_fraction for t in self.tasks]

    def exposed_delays(self) -> list[float]:
        return [t.exposed_s for t in self.tasks]

    def class_totals(self) -> dict[str, int]:
        totals: dict[str, int] = {}
        for t in self.tasks:
            for k, v in t.class_counts.items():
                totals[k] = totals.get(k, 0) + v
        return totals

    def skip_ratio(self) -> float:
        totals = self.class_totals()
        n = sum(totals.values())
        return totals.get("skip", 0) / n if n else 0.0

    def recovery_ok(self) -> bool:
        flags = [t.recovered_ok for t in self.tasks if t.recovered_ok is not None]
        return all(flags) if flags else True

    def summary(self) -> dict:
        fractions = self.exposed_fractions()
        delays = self.exposed_delays()
        walls = [t.wall_s for t in self.tasks]
        return {
            "tasks": len(self.tasks),
            "turns": sum(t.turns for t in self.tasks),
            "skip_ratio": round(self.skip_ratio(), 6),
            "exposed_fraction_p50": round(percentile(fractions, 50), 6),
            "exposed_fraction_p95": round(percentile(fractions, 95), 6),
            "exposed_delay_p50_s": round(percentile(delays, 50), 6),
            "exposed_delay_p95_s": round(percentile(delays, 95), 6),
            "task_wall_p50_s": round(percentile(walls, 50), 6),
            "task_wall_p95_s": round(percentile(walls, 95), 6),
            "recovery_ok": self.recovery_ok(),
            **{f"jobs_{k}": v for k, v in self.jobs.items()},
            **{f"sched_{k}": v for k, v in self.scheduler.items()},
        }

    def result_lines(self) -> list[str]:
        cfg = " ".join(f"{k}={v}" for k, v in sorted(self.config.items()))
        lines = [f"RESULT {cfg}"]
        for k, v in self.summary().items():
            lines.append(f"RESULT {k}={v}")
        return lines

    # -- CSV emission -------------------------------------------------------

    def write_csv(self, out_dir: Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []

        tasks_csv = out_dir / "tasks.csv"
        with open(tasks_csv, "w", newline="") as fp:
            w = csv.writer(fp)
            w.writerow(
                [
                    "task_id",
                    "mode",
                    "wall_s",
                    "exposed_s",
                    "exposed_fraction",
                    "turns",
                    "skip",
                    "fs_only",
                    "proc_only",
                    "full",
                    "crash_turn",
                    "recovered_ok",
                    "restore_wall_s",
                ]
            )
            for t in self.tasks:
                w.writerow(
                    [
                        t.task_id,
                        t.mode,
                        f"{t.wall_s:.6f}",
                        f"{t.exposed_s:.6f}",
                        f"{t.exposed_fraction:.6f}",
                        t.turns,
                        t.class_counts.get("skip", 0),
                        t.class_counts.get("fs_only", 0),
                        t.class_counts.get("proc_only", 0),
                        t.class_counts.get("full", 0),
                        "" if t.crash_turn is None else t.crash_turn,
                        "" if t.recovered_ok is None else int(t.recovered_ok),
                        f"{t.restore_wall_s:.6f}",
                    ]
                )
        written.append(tasks_csv)

        for name, values in (
            ("delay_cdf.csv", sorted(self.turn_delays)),
            ("task_exposed_fraction_cdf.csv", sorted(self.exposed_fractions())),
            ("task_wall_cdf.csv", sorted(t.wall_s for t in self.tasks)),
        ):
            path = out_dir / name
            with open(path, "w", newline="") as fp:
                w = csv.writer(fp)
                w.writerow(["value", "cum_fraction"])
                n = len(values)
                for i, v in enumerate(values):
                    w.writerow([f"{v:.6f}", f"{(i + 1) / n:.6f}" if n else ""])
            written.append(path)

        summary_csv = out_dir / "summary.csv"
        with open(summary_csv, "w", newline="") as fp:
            w = csv.writer(fp)
            w.writerow(["metric", "value"])
            for k, v in self.summary().items():
                w.writerow([k, v])
        written.append(summary_csv)
        return written
