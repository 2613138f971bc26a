"""Trace replay: the experiment driver.

Virtual mode runs every sandbox inside one deterministic discrete-event loop
(the only way density-96 runs fit on a desk); real-clock mode runs one thread
per sandbox against the same engine and coordinator, exercising the actual
concurrency contracts. Both modes share the turn protocol:

    tools for turn i -> outbound request (turn boundary; checkpoint dispatch)
    -> LLM wait -> response -> completion gate -> turn i+1

Crashes are injected mid-tools (the in-flight-command case); recovery drives
engine.restore plus either fast-forward (agent-in-a-sandbox) or command
reissue (agent-with-a-sandbox), after which the replay continues and final
state can be compared against a no-fault run.
"""

from __future__ import annotations

import random
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..backends.portable import PortableBackend
from ..backends.simulated import LatencyModel, SimulatedBackend
from ..clock import EventLoop, RealClock
from ..coordinator import AgentMode, Coordinator, ForwardToLlm, SyntheticResponse, HeldUntil
from ..conversation import Request, Response
from ..engine import Engine, ManifestStore, VirtualWorkerDriver, WorkerThreadPool
from ..errors import ConfigInvalid
from ..inspector import Inspector
from ..netchange import KERNEL_IMPL
from ..simsandbox import SimSandbox, Sleep
from .faults import FaultPlan
from .metrics import RunMetrics, TaskMetrics, percentile
from .trace import AGENT_FOOTPRINT, TaskTrace, Trace


@dataclass
class ReplayConfig:
    backend: str = "simulated"  # simulated | portable
    clock_mode: str = "virtual"  # virtual | real
    density: int = 16
    policy: str = "reactive"  # reactive | fifo
    wait_scale: float = 1.0
    seed: int = 0
    workers: int = 8
    latency: LatencyModel = field(default_factory=LatencyModel)
    store_dir: Optional[Path] = None
    workspace_dir: Optional[Path] = None
    log_dir: Optional[Path] = None
    stagger_s: float = 5.0
    capture_initial: bool = True
    real_time_factor: float = 1.0  # real mode: scales every sleep

    def validate(self) -> None:
        if self.backend not in ("simulated", "portable"):
            raise ConfigInvalid(f"unknown backend {self.backend!r}")
        if self.clock_mode not in ("virtual", "real"):
            raise ConfigInvalid(f"unknown clock mode {self.clock_mode!r}")
        if self.policy not in ("reactive", "fifo"):
            raise ConfigInvalid(f"unknown policy {self.policy!r}")
        if self.density < 1 or self.workers < 1:
            raise ConfigInvalid("density and workers must be positive")
        if self.wait_scale < 0:
            raise ConfigInvalid("wait_scale must be >= 0")


def request_body(task_id: str, turn: int) -> bytes:
    return f"task={task_id};turn={turn};request".encode()


def response_body(task_id: str, turn: int) -> bytes:
    return f"task={task_id};turn={turn};response".encode()


@dataclass
class _TaskState:
    task: TaskTrace
    sandbox: SimSandbox
    turn_idx: int = 0
    action_idx: int = 0
    crash_turn: Optional[int] = None
    crashed: bool = False
    preempt_pending: int = 0
    preemptions_taken: int = 0
    skip_tools_until: int = -1
    pending_command: Optional[str] = None
    start_t: float = 0.0
    end_t: float = 0.0
    restore_wall: float = 0.0
    restores: list[tuple[int, int]] = field(default_factory=list)  # (proc_turn, fs_turn)
    reissued: int = 0
    finished: bool = False
    final_tree_hash: str = ""
    final_registry: dict = field(default_factory=dict)


class _ReplayBase:
    """Wiring and recovery logic shared by the virtual and real drivers."""

    def __init__(self, trace: Trace, plan: Optional[FaultPlan], config: ReplayConfig):
        config.validate()
        self.trace = trace
        self.plan = plan
        self.config = config
        if plan and (plan.crash_turns or plan.preemptions) and not config.capture_initial:
            raise ConfigInvalid("fault injection requires the registration-time initial capture")
        self._tmp = tempfile.TemporaryDirectory(prefix="sandboxcr-run-")
        tmp_root = Path(self._tmp.name)
        self.store_dir = Path(config.store_dir) if config.store_dir else tmp_root / "store"
        self.workspace_dir = (
            Path(config.workspace_dir) if config.workspace_dir else tmp_root / "workspaces"
        )
        self.real_fs = config.backend == "portable"
        self.inspector = Inspector()
        self.store = ManifestStore(self.store_dir)
        self.states: dict[str, _TaskState] = {}

    def close(self) -> None:
        self._tmp.cleanup()

    # -- shared wiring ---------------------------------------------------------

    def _make_sandbox(self, task: TaskTrace) -> SimSandbox:
        root = self.workspace_dir / task.task_id if self.real_fs else None
        sandbox = SimSandbox(
            task.task_id,
            root=root,
            emit=self.inspector.ingest_event,
            initial_procs=task.init_procs,
        )
        self.inspector.register_sandbox(
            task.task_id,
            preexisting_paths=sandbox.list_paths(),
            preexisting_pids=list(task.init_procs),
        )
        if task.agent_pid is not None:
            sandbox.spawn_agent(task.agent_pid, footprint=AGENT_FOOTPRINT)
        self.engine.register_sandbox(sandbox, capture_initial=self.config.capture_initial)
        self.coordinator.register_sandbox(task.task_id, task.mode)
        return sandbox

    def _crash_and_recover(self, ts: _TaskState) -> None:
        """Kill the sandbox and bring it back from the latest manifest.

        In-sandbox: arm fast-forward from the process artifact's turn; the
        replay agent re-issues logged requests and skips tool re-execution up
        to the filesystem artifact's turn (those effects are already in the
        restored workspace). With-sandbox: reissue outstanding commands."""
        task = ts.task
        ts.sandbox.crash()
        versions = self.engine.list_versions(task.task_id)
        if not versions:
            raise ConfigInvalid(f"{task.task_id}: no recovery point (initial capture disabled)")
        latest = versions[-1]
        report = self.engine.restore(task.task_id, latest.version_id)
        ts.restore_wall += report.wall_time_s
        ts.restores.append((report.proc_turn, report.fs_turn))
        if task.mode is AgentMode.IN_SANDBOX:
            self.coordinator.begin_fast_forward(task.task_id, report.proc_turn)
            ts.skip_tools_until = report.fs_turn
            ts.turn_idx = report.proc_turn + 1
            ts.action_idx = 0
            ts.pending_command = None
        else:
            reissued = self.coordinator.reissue_outstanding(task.task_id)
            for cmd in reissued:
                turn = task.turns[int(cmd.payload)]
                ts.sandbox.apply([a for a in turn.actions if not isinstance(a, Sleep)])
                self.coordinator.complete_command(cmd.command_id)
            ts.reissued += len(reissued)
            ts.pending_command = None
            if reissued:
                # the reissued command covered this turn's tools; go to its request
                ts.action_idx = len(task.turns[ts.turn_idx].actions)
            else:
                # crash hit before the command was issued; the agent issues it afresh
                ts.action_idx = 0

    def _finish_task(self, ts: _TaskState, now: float) -> None:
        ts.end_t = now
        ts.finished = True
        ts.final_tree_hash = ts.sandbox.tree_hash()
        ts.final_registry = {str(pid): list(e) for pid, e in sorted(ts.sandbox.registry.items())}

    def _collect(self) -> RunMetrics:
        tasks = []
        turn_delays: list[float] = []
        for task in self.trace.tasks:
            ts = self.states[task.task_id]
            stats = self.coordinator.session_stats(task.task_id)
            delays = list(stats["turn_delays"].values())
            turn_delays.extend(delays)
            tasks.append(
                TaskMetrics(
                    task_id=task.task_id,
                    mode=task.mode.value,
                    wall_s=ts.end_t - ts.start_t,
                    exposed_s=stats["exposed_delay_total"],
                    turns=len(task.turns),
                    class_counts=stats["class_counts"],
                    synthetic_served=stats["synthetic_served"],
                    llm_forwards=stats["llm_forwards"],
                    crash_turn=ts.crash_turn if ts.crashed else None,
                    preemptions=ts.preemptions_taken,
                    restore_wall_s=ts.restore_wall,
                    restores=list(ts.restores),
                    reissued=ts.reissued,
                    final_tree_hash=ts.final_tree_hash,
                    final_registry=ts.final_registry,
                )
            )
        jobs = self.engine.job_stats()
        done_durations = [
            j.completion_time - j.start_time
            for j in self.engine.jobs_snapshot()
            if j.completion_time is not None and j.start_time is not None and j.turn_index >= 0
        ]
        jobs["ckpt_latency_p50_s"] = round(percentile(done_durations, 50), 6) if done_durations else 0.0
        jobs["ckpt_latency_p95_s"] = round(percentile(done_durations, 95), 6) if done_durations else 0.0
        scheduler = self.engine.scheduler.stats()
        return RunMetrics(
            config={
                "backend": self.config.backend,
                "clock_mode": self.config.clock_mode,
                "density": self.config.density,
                "policy": self.config.policy,
                "wait_scale": self.config.wait_scale,
                "seed": self.config.seed,
                "workers": self.config.workers,
                "kernel": KERNEL_IMPL,
            },
            tasks=tasks,
            turn_delays=sorted(turn_delays),
            scheduler=scheduler,
            jobs=jobs,
            completion_order=list(self.engine.completion_order),
        )


class VirtualReplay(_ReplayBase):
    def __init__(self, trace: Trace, plan: Optional[FaultPlan], config: ReplayConfig):
        super().__init__(trace, plan, config)
        self.loop = EventLoop()
        if config.backend == "simulated":
            self.backend = SimulatedBackend(config.latency, loop=self.loop)
        else:
            self.backend = PortableBackend(self.store_dir / "blobs-root")
        self.engine = Engine(
            self.backend,
            self.store,
            clock=self.loop,
            reactive=config.policy == "reactive",
            inspector=self.inspector,
        )
        self.driver = VirtualWorkerDriver(self.engine, self.loop, slots=config.workers)
        self.coordinator = Coordinator(
            self.inspector, self.engine, clock=self.loop, log_dir=config.log_dir
        )
        self._admission: list[str] = []
        self._active = 0

    def run(self) -> RunMetrics:
        rng = random.Random(self.config.seed * 7919 + 17)
        offsets = {t.task_id: rng.uniform(0.0, self.config.stagger_s) for t in self.trace.tasks}
        order = sorted(self.trace.tasks, key=lambda t: (offsets[t.task_id], t.task_id))
        for i, task in enumerate(order):
            if i < self.config.density:
                self.loop.call_at(offsets[task.task_id], self._starter(task))
            else:
                self._admission.append(task.task_id)
        self.loop.run()
        metrics = self._collect()
        return metrics

    def _starter(self, task: TaskTrace):
        def start() -> None:
            sandbox = self._make_sandbox(task)
            ts = _TaskState(
                task=task,
                sandbox=sandbox,
                crash_turn=(self.plan.crash_turns.get(task.task_id) if self.plan else None),
                start_t=self.loop.now(),
            )
            self.states[task.task_id] = ts
            self._active += 1
            if self.plan:
                for p in self.plan.preemptions.get(task.task_id, []):
                    self.loop.call_at(ts.start_t + p.at_s, lambda: self._preempt(ts))
            self._continue_actions(ts)

        return start

    def _preempt(self, ts: _TaskState) -> None:
        if not ts.finished:
            ts.preempt_pending += 1

    def _continue_actions(self, ts: _TaskState) -> None:
        task = ts.task
        if ts.preempt_pending and ts.action_idx == 0:
            ts.preempt_pending -= 1
            ts.preemptions_taken += 1
            self._crash_and_recover(ts)
            self.loop.call_later(0.0, lambda: self._continue_actions(ts))
            return
        turn = task.turns[ts.turn_idx]
        skipping = ts.turn_idx <= ts.skip_tools_until
        if skipping:
            ts.action_idx = len(turn.actions)
        crash_here = (
            ts.crash_turn == ts.turn_idx and not ts.crashed and not skipping
        )
        if crash_here and not turn.actions:
            ts.crashed = True
            self._crash_and_recover(ts)
            self.loop.call_later(0.0, lambda: self._continue_actions(ts))
            return
        crash_at = len(turn.actions) // 2 if crash_here else None
        if (
            not skipping
            and ts.action_idx == 0
            and task.mode is AgentMode.WITH_SANDBOX
            and ts.pending_command is None
            and turn.actions
        ):
            ts.pending_command = self.coordinator.record_command(task.task_id, ts.turn_idx)
        while ts.action_idx < len(turn.actions):
            if crash_at is not None and ts.action_idx == crash_at:
                ts.crashed = True
                self._crash_and_recover(ts)
                self.loop.call_later(0.0, lambda: self._continue_actions(ts))
                return
            action = turn.actions[ts.action_idx]
            ts.action_idx += 1
            if isinstance(action, Sleep):
                self.loop.call_later(action.seconds, lambda: self._continue_actions(ts))
                return
            ts.sandbox.apply_one(action)
        self._send_request(ts)

    def _send_request(self, ts: _TaskState) -> None:
        task = ts.task
        if ts.pending_command is not None:
            self.coordinator.complete_command(ts.pending_command)
            ts.pending_command = None
        decision = self.coordinator.on_outbound_request(
            task.task_id, Request(body=request_body(task.task_id, ts.turn_idx))
        )
        if isinstance(decision, SyntheticResponse):
            self._advance_turn(ts)
            return
        assert isinstance(decision, ForwardToLlm)
        wait_s = ts.task.turns[ts.turn_idx].wait_ms / 1000.0 * self.config.wait_scale
        self.loop.call_later(wait_s, lambda: self._deliver_response(ts))

    def _deliver_response(self, ts: _TaskState) -> None:
        task = ts.task
        decision = self.coordinator.on_llm_response(
            task.task_id, Response(body=response_body(task.task_id, ts.turn_idx))
        )
        if isinstance(decision, HeldUntil):
            self.coordinator.add_release_callback(
                task.task_id, lambda: self.loop.call_later(0.0, lambda: self._advance_turn(ts))
            )
            return
        self._advance_turn(ts)

    def _advance_turn(self, ts: _TaskState) -> None:
        ts.turn_idx += 1
        ts.action_idx = 0
        if ts.turn_idx >= len(ts.task.turns):
            self._finish_task(ts, self.loop.now())
            self._active -= 1
            if self._admission:
                next_id = self._admission.pop(0)
                task = next(t for t in self.trace.tasks if t.task_id == next_id)
                self.loop.call_later(0.0, self._starter(task))
            return
        self.loop.call_later(0.0, lambda: self._continue_actions(ts))


class RealClockReplay(_ReplayBase):
    """Thread-per-sandbox replay on the wall clock (scaled by
    `real_time_factor`); exercises the real concurrency contracts."""

    def __init__(self, trace: Trace, plan: Optional[FaultPlan], config: ReplayConfig):
        super().__init__(trace, plan, config)
        self.clock = RealClock()
        if config.backend == "simulated":
            self.backend = SimulatedBackend(
                config.latency, loop=None, time_factor=config.real_time_factor
            )
        else:
            self.backend = PortableBackend(self.store_dir / "blobs-root")
        self.engine = Engine(
            self.backend,
            self.store,
            clock=self.clock,
            reactive=config.policy == "reactive",
            inspector=self.inspector,
        )
        self.pool = WorkerThreadPool(self.engine, workers=config.workers)
        self.coordinator = Coordinator(
            self.inspector, self.engine, clock=self.clock, log_dir=config.log_dir
        )
        self._slots = threading.Semaphore(config.density)
        self._register_lock = threading.Lock()

    def run(self) -> RunMetrics:
        self.pool.start()
        try:
            threads = []
            for task in self.trace.tasks:
                t = threading.Thread(target=self._task_thread, args=(task,), daemon=True)
                t.start()
                threads.append(t)
            for t in threads:
                t.join()
        finally:
            self.pool.stop()
        return self._collect()

    def _task_thread(self, task: TaskTrace) -> None:
        factor = self.config.real_time_factor
        with self._slots:
            with self._register_lock:
                sandbox = self._make_sandbox(task)
                ts = _TaskState(
                    task=task,
                    sandbox=sandbox,
                    crash_turn=(self.plan.crash_turns.get(task.task_id) if self.plan else None),
                    start_t=self.clock.now(),
                )
                self.states[task.task_id] = ts
            while ts.turn_idx < len(task.turns):
                turn = task.turns[ts.turn_idx]
                skipping = ts.turn_idx <= ts.skip_tools_until
                if skipping:
                    ts.action_idx = len(turn.actions)
                crash_here = ts.crash_turn == ts.turn_idx and not ts.crashed and not skipping
                if crash_here and not turn.actions:
                    ts.crashed = True
                    self._crash_and_recover(ts)
                    continue
                crash_at = len(turn.actions) // 2 if crash_here else None
                if (
                    not skipping
                    and ts.action_idx == 0
                    and task.mode is AgentMode.WITH_SANDBOX
                    and ts.pending_command is None
                    and turn.actions
                ):
                    ts.pending_command = self.coordinator.record_command(task.task_id, ts.turn_idx)
                aborted = False
                while ts.action_idx < len(turn.actions):
                    if crash_at is not None and ts.action_idx == crash_at:
                        ts.crashed = True
                        self._crash_and_recover(ts)
                        aborted = True
                        break
                    action = turn.actions[ts.action_idx]
                    ts.action_idx += 1
                    if isinstance(action, Sleep):
                        time.sleep(action.seconds * factor)
                    else:
                        ts.sandbox.apply_one(action)
                if aborted:
                    continue
                if ts.pending_command is not None:
                    self.coordinator.complete_command(ts.pending_command)
                    ts.pending_command = None
                decision = self.coordinator.on_outbound_request(
                    task.task_id, Request(body=request_body(task.task_id, ts.turn_idx))
                )
                if isinstance(decision, SyntheticResponse):
                    ts.turn_idx += 1
                    ts.action_idx = 0
                    continue
                time.sleep(turn.wait_ms / 1000.0 * self.config.wait_scale * factor)
                release = self.coordinator.on_llm_response(
                    task.task_id, Response(body=response_body(task.task_id, ts.turn_idx))
                )
                if isinstance(release, HeldUntil):
                    if not self.coordinator.wait_for_release(task.task_id, timeout=60.0):
                        raise TimeoutError(f"{task.task_id}: gate never released")
                ts.turn_idx += 1
                ts.action_idx = 0
            self._finish_task(ts, self.clock.now())


def run_replay(trace: Trace, plan: Optional[FaultPlan] = None, config: Optional[ReplayConfig] = None) -> RunMetrics:
    config = config or ReplayConfig()
    runner: _ReplayBase
    if config.clock_mode == "virtual":
        runner = VirtualReplay(trace, plan, config)
    else:
        runner = RealClockReplay(trace, plan, config)
    try:
        return runner.run()
    finally:
        runner.close()


def verify_recovery(
    trace: Trace, plan: FaultPlan, config: Optional[ReplayConfig] = None
) -> tuple[RunMetrics, RunMetrics]:
    """Faulted run checked against a no-fault reference; sets recovered_ok
    per task (tree hash and process registry must both match).

    The reference run always uses throwaway store/workspace dirs; the faulted
    run (the run of record) keeps the configured ones."""
    config = config or ReplayConfig(backend="portable")
    reference = run_replay(
        trace, None, replace(config, store_dir=None, workspace_dir=None, log_dir=None)
    )
    faulted = run_replay(trace, plan, config)
    ref_by_task = {t.task_id: t for t in reference.tasks}
    for t in faulted.tasks:
        ref = ref_by_task[t.task_id]
        t.recovered_ok = (
            t.final_tree_hash == ref.final_tree_hash and t.final_registry == ref.final_registry
        )
    return faulted, reference
