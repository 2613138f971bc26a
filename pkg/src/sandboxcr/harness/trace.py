"""Task traces: generation, serialization, and ground-truth validation.

A trace is a set of tasks, each an ordered list of turns; a turn carries the
LLM wait duration, the scripted tool actions, and (optionally) the expected
checkpoint class. Expected classes are ground truth by construction and are
re-checked against the state-diff oracle at load time.

File format: line-delimited JSON with a one-line header carrying the format
version; durations in milliseconds.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

from ..coordinator import AgentMode
from ..errors import SpecInvalid, TraceParse
from ..netchange import CheckpointClass
from ..simsandbox import (
    CreateFile,
    DeleteFile,
    KillProc,
    ReadFile,
    RenameFile,
    Sleep,
    SimSandbox,
    SpawnProc,
    ToolAction,
    TouchMemory,
    WriteFile,
)
from ..statediff import MaterializedState, diff_states

TRACE_FORMAT = 1
AGENT_FOOTPRINT = 64_000_000


@dataclass
class TraceTurn:
    wait_ms: float
    actions: list[ToolAction]
    expected_class: Optional[CheckpointClass] = None


@dataclass
class TaskTrace:
    task_id: str
    mode: AgentMode
    turns: list[TraceTurn]
    init_procs: dict[int, tuple[str, int]] = field(default_factory=dict)
    agent_pid: Optional[int] = None


@dataclass
class Trace:
    tasks: list[TaskTrace]
    meta: dict = field(default_factory=dict)

    def subset(self, n: int) -> "Trace":
        return Trace(tasks=self.tasks[:n], meta=dict(self.meta))


@dataclass
class TraceGenSpec:
    tasks: int
    turns: int
    stateless_fraction: float
    fs_fraction: float
    proc_fraction: float
    wait_median_ms: float = 3340.0
    wait_sigma: float = 0.8
    seed: int = 0
    mode: str = "in_sandbox"  # in_sandbox | with_sandbox | mixed
    footprint_median: int = 185_000_000
    footprint_sigma: float = 0.9
    tool_ms_median: float = 150.0

    def validate(self) -> None:
        for name in ("stateless_fraction", "fs_fraction", "proc_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecInvalid(f"{name}={v} outside [0, 1]")
        total = self.stateless_fraction + self.fs_fraction + self.proc_fraction
        if total > 1.0 + 1e-9:
            raise SpecInvalid(f"class fractions sum to {total} > 1")
        if self.tasks < 1 or self.turns < 1:
            raise SpecInvalid("tasks and turns must be positive")
        if self.mode not in ("in_sandbox", "with_sandbox", "mixed"):
            raise SpecInvalid(f"unknown mode {self.mode!r}")


def _class_counts(spec: TraceGenSpec) -> dict[CheckpointClass, int]:
    """Largest-remainder allocation so reported ratios match the fractions
    exactly whenever `turns * fraction` is integral."""
    n = spec.turns
    fracs = [
        (CheckpointClass.SKIP, spec.stateless_fraction),
        (CheckpointClass.FS_ONLY, spec.fs_fraction),
        (CheckpointClass.PROC_ONLY, spec.proc_fraction),
        (
            CheckpointClass.FULL,
            max(0.0, 1.0 - spec.stateless_fraction - spec.fs_fraction - spec.proc_fraction),
        ),
    ]
    counts = {k: int(math.floor(f * n)) for k, f in fracs}
    remainders = sorted(
        ((f * n - counts[k], i, k) for i, (k, f) in enumerate(fracs)),
        key=lambda t: (-t[0], t[1]),
    )
    short = n - sum(counts.values())
    for _, _, k in remainders[:short]:
        counts[k] += 1
    return counts


class _TaskGen:
    """Action generator with enough state to guarantee each turn's net
    effect matches its annotated class."""

    def __init__(self, rng: random.Random, agent_pid: Optional[int]) -> None:
        self.rng = rng
        self.agent_pid = agent_pid
        self.files: list[str] = []
        self.file_counter = 0
        self.pid_counter = 200
        self.live_pids: list[int] = []

    def new_file_path(self) -> str:
        self.file_counter += 1
        if self.rng.random() < 0.15:
            return f"/data/f{self.file_counter:04d}"
        return f"/f{self.file_counter:04d}"

    def payload(self, n: int) -> bytes:
        return ("x%08x-" % self.rng.getrandbits(32)) .encode() * max(1, n // 10)

    def new_pid(self) -> int:
        self.pid_counter += 1
        return self.pid_counter

    def turn_actions(self, klass: CheckpointClass) -> list[ToolAction]:
        rng = self.rng
        actions: list[ToolAction] = []
        if rng.random() < 0.7:
            # rounded to the trace file's duration resolution
            actions.append(Sleep(round(rng.lognormvariate(math.log(0.15), 0.6), 6)))
        if self.agent_pid is not None:
            # the in-sandbox agent dirties its own memory every turn; tracking
            # must shrug this off or every turn would need a process dump
            actions.append(TouchMemory(self.agent_pid))
        start_files = list(self.files)

        def transient_file() -> None:
            path = f"/tmp{self.file_counter}x{rng.randrange(1000)}"
            self.file_counter += 1
            actions.append(CreateFile(path, self.payload(24)))
            if rng.random() < 0.5:
                actions.append(WriteFile(path, self.payload(24)))
            actions.append(DeleteFile(path))

        def transient_proc() -> None:
            pid = self.new_pid()
            actions.append(SpawnProc(pid, label="sh", footprint=4_000_000))
            if rng.random() < 0.3:
                actions.append(TouchMemory(pid))
            actions.append(KillProc(pid))

        def fs_effect() -> None:
            ops = rng.randint(1, 3)
            touched: set[str] = set()
            for _ in range(ops):
                candidates = [p for p in start_files if p not in touched]
                choice = rng.random()
                if choice < 0.45 or not candidates:
                    path = self.new_file_path()
                    actions.append(CreateFile(path, self.payload(rng.randint(32, 256))))
                    self.files.append(path)
                    touched.add(path)
                elif choice < 0.8:
                    path = rng.choice(candidates)
                    actions.append(WriteFile(path, self.payload(rng.randint(32, 256))))
                    touched.add(path)
                elif choice < 0.9:
                    path = rng.choice(candidates)
                    actions.append(DeleteFile(path))
                    self.files.remove(path)
                    touched.add(path)
                else:
                    old = rng.choice(candidates)
                    new = self.new_file_path()
                    actions.append(RenameFile(old, new))
                    self.files.remove(old)
                    self.files.append(new)
                    touched.add(old)
                    touched.add(new)

        def proc_effect() -> None:
            choice = rng.random()
            if choice < 0.65:
                actions.append(TouchMemory(1))
            elif choice < 0.85 or not self.live_pids:
                pid = self.new_pid()
                actions.append(
                    SpawnProc(pid, label="daemon", footprint=rng.randrange(8, 48) * 1_000_000)
                )
                self.live_pids.append(pid)
            else:
                pid = self.live_pids.pop(rng.randrange(len(self.live_pids)))
                actions.append(KillProc(pid))

        if klass is CheckpointClass.SKIP:
            if start_files and rng.random() < 0.6:
                actions.append(ReadFile(rng.choice(start_files)))
            if rng.random() < 0.35:
                transient_file()
            if rng.random() < 0.2:
                transient_proc()
        elif klass is CheckpointClass.FS_ONLY:
            fs_effect()
            if rng.random() < 0.15:
                transient_proc()
        elif klass is CheckpointClass.PROC_ONLY:
            proc_effect()
            if rng.random() < 0.15:
                transient_file()
        else:
            fs_effect()
            proc_effect()
        return actions


def gen_task_with_classes(
    task_id: str,
    mode: AgentMode,
    classes: list[CheckpointClass],
    seed: int,
    wait_median_ms: float = 3340.0,
    wait_sigma: float = 0.8,
    footprint_median: int = 185_000_000,
    footprint_sigma: float = 0.9,
) -> TaskTrace:
    """One task whose per-turn classes follow `classes` exactly."""
    rng = random.Random(seed & 0xFFFFFFFF)
    agent_pid = 100 if mode is AgentMode.IN_SANDBOX else None
    init_footprint = int(rng.lognormvariate(math.log(footprint_median), footprint_sigma))
    gen = _TaskGen(rng, agent_pid)
    turns = []
    for klass in classes:
        wait_ms = round(rng.lognormvariate(math.log(wait_median_ms), wait_sigma), 3)
        turns.append(TraceTurn(wait_ms=wait_ms, actions=gen.turn_actions(klass), expected_class=klass))
    return TaskTrace(
        task_id=task_id,
        mode=mode,
        turns=turns,
        init_procs={1: ("workload", init_footprint)},
        agent_pid=agent_pid,
    )


def gen_trace(spec: TraceGenSpec) -> Trace:
    spec.validate()
    counts = _class_counts(spec)
    tasks = []
    for t in range(spec.tasks):
        rng = random.Random((spec.seed * 1_000_003 + t) & 0xFFFFFFFF)
        if spec.mode == "mixed":
            mode = AgentMode.IN_SANDBOX if t % 2 == 0 else AgentMode.WITH_SANDBOX
        else:
            mode = AgentMode(spec.mode)
        classes = [k for k, c in counts.items() for _ in range(c)]
        rng.shuffle(classes)
        tasks.append(
            gen_task_with_classes(
                f"t{t:03d}",
                mode,
                classes,
                seed=spec.seed * 1_000_003 + t + 1,
                wait_median_ms=spec.wait_median_ms,
                wait_sigma=spec.wait_sigma,
                footprint_median=spec.footprint_median,
                footprint_sigma=spec.footprint_sigma,
            )
        )
    meta = {
        "generator": {
            "tasks": spec.tasks,
            "turns": spec.turns,
            "stateless_fraction": spec.stateless_fraction,
            "fs_fraction": spec.fs_fraction,
            "proc_fraction": spec.proc_fraction,
            "wait_median_ms": spec.wait_median_ms,
            "wait_sigma": spec.wait_sigma,
            "seed": spec.seed,
            "mode": spec.mode,
        }
    }
    return Trace(tasks=tasks, meta=meta)


# --- serialization -----------------------------------------------------------


def _action_to_json(action: ToolAction) -> dict:
    if isinstance(action, CreateFile):
        return {"op": "create", "path": action.path, "data": action.data.decode()}
    if isinstance(action, WriteFile):
        return {"op": "write", "path": action.path, "data": action.data.decode()}
    if isinstance(action, DeleteFile):
        return {"op": "delete", "path": action.path}
    if isinstance(action, RenameFile):
        return {"op": "rename", "old": action.old_path, "new": action.new_path}
    if isinstance(action, SpawnProc):
        rec = {"op": "spawn", "pid": action.pid, "label": action.label, "footprint": action.footprint}
        if action.is_agent:
            rec["agent"] = True
        return rec
    if isinstance(action, KillProc):
        return {"op": "kill", "pid": action.pid}
    if isinstance(action, TouchMemory):
        return {"op": "touch", "pid": action.pid}
    if isinstance(action, Sleep):
        return {"op": "sleep", "seconds": round(action.seconds, 6)}
    if isinstance(action, ReadFile):
        return {"op": "read", "path": action.path}
    raise TypeError(f"unknown action {action!r}")


def _action_from_json(rec: dict) -> ToolAction:
    op = rec["op"]
    if op == "create":
        return CreateFile(rec["path"], rec["data"].encode())
    if op == "write":
        return WriteFile(rec["path"], rec["data"].encode())
    if op == "delete":
        return DeleteFile(rec["path"])
    if op == "rename":
        return RenameFile(rec["old"], rec["new"])
    if op == "spawn":
        return SpawnProc(rec["pid"], rec.get("label", "proc"), rec.get("footprint", 0), rec.get("agent", False))
    if op == "kill":
        return KillProc(rec["pid"])
    if op == "touch":
        return TouchMemory(rec["pid"])
    if op == "sleep":
        return Sleep(rec["seconds"])
    if op == "read":
        return ReadFile(rec["path"])
    raise TraceParse(f"unknown action op {op!r}")


def save_trace(trace: Trace, path: Union[Path, str]) -> None:
    with open(path, "w") as fp:
        fp.write(json.dumps({"kind": "header", "format": TRACE_FORMAT, "meta": trace.meta}, sort_keys=True) + "\n")
        for task in trace.tasks:
            fp.write(
                json.dumps(
                    {
                        "kind": "task",
                        "task": task.task_id,
                        "mode": task.mode.value,
                        "agent_pid": task.agent_pid,
                        "init_procs": {str(pid): list(e) for pid, e in task.init_procs.items()},
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            for i, turn in enumerate(task.turns):
                fp.write(
                    json.dumps(
                        {
                            "kind": "turn",
                            "task": task.task_id,
                            "turn": i,
                            "wait_ms": round(turn.wait_ms, 3),
                            "class": turn.expected_class.value if turn.expected_class else None,
                            "actions": [_action_to_json(a) for a in turn.actions],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def load_trace(source: Union[Path, str, TextIO, Iterable[str]], validate: bool = True) -> Trace:
    if isinstance(source, (str, Path)):
        with open(source) as fp:
            lines = fp.readlines()
    else:
        lines = list(source)
    if not lines:
        raise TraceParse("empty trace file")
    header = json.loads(lines[0])
    if header.get("kind") != "header" or header.get("format") != TRACE_FORMAT:
        raise TraceParse(f"bad trace header: {lines[0].strip()!r}")
    tasks: dict[str, TaskTrace] = {}
    order: list[str] = []
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            kind = rec["kind"]
            if kind == "task":
                task = TaskTrace(
                    task_id=rec["task"],
                    mode=AgentMode(rec["mode"]),
                    turns=[],
                    init_procs={int(pid): (e[0], int(e[1])) for pid, e in rec["init_procs"].items()},
                    agent_pid=rec.get("agent_pid"),
                )
                tasks[task.task_id] = task
                order.append(task.task_id)
            elif kind == "turn":
                task = tasks[rec["task"]]
                if rec["turn"] != len(task.turns):
                    raise TraceParse(f"turn rows out of order for {rec['task']}")
                if rec["wait_ms"] < 0:
                    raise TraceParse(f"negative wait in {rec['task']} turn {rec['turn']}")
                task.turns.append(
                    TraceTurn(
                        wait_ms=float(rec["wait_ms"]),
                        actions=[_action_from_json(a) for a in rec["actions"]],
                        expected_class=CheckpointClass(rec["class"]) if rec.get("class") else None,
                    )
                )
            else:
                raise TraceParse(f"unknown record kind {kind!r}")
        except (KeyError, ValueError, TypeError) as exc:
            raise TraceParse(f"bad trace line: {line!r}") from exc
    trace = Trace(tasks=[tasks[tid] for tid in order], meta=header.get("meta", {}))
    if validate:
        validate_annotations(trace)
    return trace


def validate_annotations(trace: Trace) -> None:
    """Check every annotated turn against the state-diff oracle, mirroring
    the runtime's baseline rule (reset after each stateful turn)."""
    for task in trace.tasks:
        collected = []
        sandbox = SimSandbox(
            task.task_id,
            root=None,
            emit=lambda e: collected.append(e.payload),
            initial_procs=task.init_procs,
        )
        state = MaterializedState.from_sets([], list(task.init_procs))
        excluded: set[int] = set()
        if task.agent_pid is not None:
            sandbox.spawn_agent(task.agent_pid, footprint=AGENT_FOOTPRINT)
            excluded.add(task.agent_pid)
            for payload in collected:
                state.apply(payload)
            collected.clear()
        baseline = state.copy()
        for i, turn in enumerate(task.turns):
            if turn.expected_class is None:
                continue
            collected.clear()
            sandbox.apply(turn.actions)
            for payload in collected:
                state.apply(payload)
            changed_paths, proc_delta = diff_states(baseline, state, excluded)
            fs, proc = bool(changed_paths), bool(proc_delta)
            actual = {
                (False, False): CheckpointClass.SKIP,
                (True, False): CheckpointClass.FS_ONLY,
                (False, True): CheckpointClass.PROC_ONLY,
                (True, True): CheckpointClass.FULL,
            }[(fs, proc)]
            if actual is not turn.expected_class:
                raise TraceParse(
                    f"{task.task_id} turn {i}: annotated {turn.expected_class.value}, oracle says {actual.value}"
                )
            if actual is not CheckpointClass.SKIP:
                baseline = state.copy()
