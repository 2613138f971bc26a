"""Turn-boundary control plane.

Sits on the agent-to-LLM request path: detects turn boundaries at request
egress, dispatches checkpoint jobs before the LLM ever answers, gates
response release on checkpoint durability, promotes jobs whose latency has
become exposed, and provides the two recovery-transparency mechanisms
(fast-forward replay for in-sandbox agents, command reissue for external
agents).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

from .clock import Clock, RealClock
from .conversation import ConversationLog, Request, Response, TurnRecord, request_digest
from .engine.core import Engine
from .engine.jobs import CheckpointJob, Lifecycle
from .errors import (
    DigestMismatchDuringReplay,
    IndexBeyondLog,
    ModeMismatch,
    NoMatchingTurn,
    PreviousGateUnresolved,
    UnknownCommand,
    UnknownSandbox,
)
from .inspector import Inspector
from .netchange import CheckpointClass, classify


class AgentMode(Enum):
    IN_SANDBOX = "in_sandbox"
    WITH_SANDBOX = "with_sandbox"


@dataclass(frozen=True)
class ForwardToLlm:
    turn_index: int
    job_id: Optional[str]
    klass: CheckpointClass


@dataclass(frozen=True)
class SyntheticResponse:
    turn_index: int
    body: bytes


ForwardDecision = Union[ForwardToLlm, SyntheticResponse]


@dataclass(frozen=True)
class ReleaseNow:
    turn_index: int
    exposed_delay: float


@dataclass(frozen=True)
class HeldUntil:
    turn_index: int
    job_id: str


ReleaseDecision = Union[ReleaseNow, HeldUntil]


class CommandStatus(Enum):
    OUTSTANDING = "outstanding"
    COMPLETED = "completed"


@dataclass
class InFlightCommand:
    sandbox_id: str
    command_id: str
    payload: object
    issued_at: float
    status: CommandStatus = CommandStatus.OUTSTANDING


_IDLE = "idle"
_AWAITING = "awaiting_response"
_HELD = "held"


@dataclass
class _Session:
    sandbox_id: str
    mode: AgentMode
    log: ConversationLog
    lock: threading.RLock = field(default_factory=threading.RLock)
    phase: str = _IDLE
    current_turn: Optional[int] = None
    outstanding_job: Optional[str] = None
    job_terminal: bool = False
    job_failed: bool = False
    job_completion_time: Optional[float] = None
    response_arrival: Optional[float] = None
    released: threading.Event = field(default_factory=threading.Event)
    release_callbacks: list[Callable[[], None]] = field(default_factory=list)
    # accounting
    exposed_delay_accumulator: float = 0.0
    turn_delays: dict[int, float] = field(default_factory=dict)
    class_counts: dict[CheckpointClass, int] = field(default_factory=dict)
    llm_forwards: int = 0
    synthetic_served: int = 0
    jobs_submitted: int = 0
    jobs_failed: int = 0
    commands: dict[str, InFlightCommand] = field(default_factory=dict)
    command_order: list[str] = field(default_factory=list)
    command_counter: int = 0


class Coordinator:
    def __init__(
        self,
        inspector: Inspector,
        engine: Engine,
        clock: Optional[Clock] = None,
        log_dir: Optional[Path] = None,
    ) -> None:
        self.inspector = inspector
        self.engine = engine
        self.clock = clock or RealClock()
        self.log_dir = log_dir
        self._sessions: dict[str, _Session] = {}
        self._registry_lock = threading.Lock()
        engine.add_terminal_listener(self._on_job_terminal)

    # -- registration ------------------------------------------------------

    def register_sandbox(self, sandbox_id: str, mode: AgentMode = AgentMode.IN_SANDBOX) -> None:
        with self._registry_lock:
            if sandbox_id in self._sessions:
                raise ValueError(f"sandbox {sandbox_id!r} already registered")
            self._sessions[sandbox_id] = _Session(
                sandbox_id=sandbox_id,
                mode=mode,
                log=ConversationLog(sandbox_id, self.log_dir),
            )

    def _session(self, sandbox_id: str) -> _Session:
        try:
            return self._sessions[sandbox_id]
        except KeyError:
            raise UnknownSandbox(sandbox_id) from None

    def conversation(self, sandbox_id: str) -> ConversationLog:
        return self._session(sandbox_id).log

    # -- request path --------------------------------------------------------

    def on_outbound_request(self, sandbox_id: str, request: Request) -> ForwardDecision:
        """Intercept an agent->LLM request; this marks the end of a turn.

        Fast-forward path: while the replay cursor is inside the cached log
        and the request digest matches, serve the cached response without
        forwarding and without dispatching checkpoint work. Live path: append
        the turn record, classify the turn's net change, and dispatch the
        checkpoint job before the request ever reaches the LLM.
        """
        session = self._session(sandbox_id)
        digest = request_digest(request)
        with session.lock:
            if session.phase != _IDLE:
                raise PreviousGateUnresolved(f"{sandbox_id}: turn {session.current_turn} still gated")
            log = session.log
            if log.replay_cursor < len(log.records):
                cached = log.records[log.replay_cursor]
                if cached.request_digest != digest:
                    log.replay_cursor = len(log.records)  # abort fast-forward
                    raise DigestMismatchDuringReplay(
                        f"{sandbox_id}: turn {cached.turn_index} diverged from cached history"
                    )
                if cached.response_body is None:
                    log.replay_cursor = len(log.records)
                    raise DigestMismatchDuringReplay(
                        f"{sandbox_id}: cached turn {cached.turn_index} has no response to replay"
                    )
                log.replay_cursor += 1
                session.synthetic_served += 1
                session.turn_delays.setdefault(cached.turn_index, 0.0)
                return SyntheticResponse(turn_index=cached.turn_index, body=cached.response_body)

            turn_index = len(log.records)
            up_to_seq = self.inspector.last_seq(sandbox_id)
            log.append_request(
                TurnRecord(
                    sandbox_id=sandbox_id,
                    turn_index=turn_index,
                    request_digest=digest,
                    request_body=request.body,
                    completed_at_seq=up_to_seq,
                )
            )
            log.replay_cursor = len(log.records)
            report = self.inspector.compute_net_change(sandbox_id, up_to_seq)
            klass = classify(report)
            session.class_counts[klass] = session.class_counts.get(klass, 0) + 1
            job_id = None
            if klass is not CheckpointClass.SKIP:
                job = self.engine.submit(sandbox_id, turn_index, klass, up_to_seq)
                job_id = job.job_id
                session.jobs_submitted += 1
            session.phase = _AWAITING
            session.current_turn = turn_index
            session.outstanding_job = job_id
            session.job_terminal = job_id is None
            session.job_failed = False
            session.job_completion_time = None
            session.response_arrival = None
            session.released = threading.Event()
            session.llm_forwards += 1
            return ForwardToLlm(turn_index=turn_index, job_id=job_id, klass=klass)

    def on_llm_response(self, sandbox_id: str, response: Response) -> ReleaseDecision:
        """Intercept the returning LLM response and decide on release.

        If the turn's checkpoint is still in flight the job is promoted and
        the response held; release then happens from the engine's terminal
        notification, which may arrive from another execution context."""
        session = self._session(sandbox_id)
        with session.lock:
            if session.phase != _AWAITING or session.current_turn is None:
                raise NoMatchingTurn(f"{sandbox_id}: no turn awaiting a response")
            turn_index = session.current_turn
            session.log.set_response(turn_index, response.body)
            now = self.clock.now()
            session.response_arrival = now
            if session.outstanding_job is None or session.job_terminal:
                session.turn_delays[turn_index] = 0.0
                self._resolve_gate(session)
                return ReleaseNow(turn_index=turn_index, exposed_delay=0.0)
            self.engine.promote(session.outstanding_job)
            # the promote call may have completed the race: re-check under lock
            if session.job_terminal:
                session.turn_delays[turn_index] = 0.0
                self._resolve_gate(session)
                return ReleaseNow(turn_index=turn_index, exposed_delay=0.0)
            session.phase = _HELD
            return HeldUntil(turn_index=turn_index, job_id=session.outstanding_job)

    def _resolve_gate(self, session: _Session) -> None:
        session.phase = _IDLE
        session.current_turn = None
        session.outstanding_job = None
        callbacks = list(session.release_callbacks)
        session.release_callbacks.clear()
        session.released.set()
        for fn in callbacks:
            fn()

    def _on_job_terminal(self, job: CheckpointJob) -> None:
        session = self._sessions.get(job.sandbox_id)
        if session is None:
            return
        with session.lock:
            if job.lifecycle is Lifecycle.DONE:
                # checkpoint durable: next interval measures change from here
                self.inspector.reset_baseline(job.sandbox_id, job.up_to_seq)
            if session.outstanding_job != job.job_id:
                return
            session.job_terminal = True
            session.job_failed = job.lifecycle is Lifecycle.FAILED
            if session.job_failed:
                session.jobs_failed += 1
            # engine stamps completion before notifying; using it keeps the
            # accounting exact even if this callback is delayed
            session.job_completion_time = (
                job.completion_time if job.completion_time is not None else self.clock.now()
            )
            if session.phase == _HELD:
                held = max(0.0, session.job_completion_time - (session.response_arrival or 0.0))
                session.exposed_delay_accumulator += held
                assert session.current_turn is not None
                session.turn_delays[session.current_turn] = held
                self._resolve_gate(session)

    # -- release plumbing -----------------------------------------------------

    def add_release_callback(self, sandbox_id: str, fn: Callable[[], None]) -> None:
        """Run `fn` when the currently held response releases (immediately if
        nothing is held)."""
        session = self._session(sandbox_id)
        with session.lock:
            if session.phase == _HELD:
                session.release_callbacks.append(fn)
                return
        fn()

    def wait_for_release(self, sandbox_id: str, timeout: Optional[float] = None) -> bool:
        session = self._session(sandbox_id)
        with session.lock:
            if session.phase != _HELD:
                return True
            event = session.released
        return event.wait(timeout)

    # -- reliable execution interface (agent-with-a-sandbox) -------------------

    def record_command(self, sandbox_id: str, payload: object) -> str:
        session = self._session(sandbox_id)
        if session.mode is not AgentMode.WITH_SANDBOX:
            raise ModeMismatch(f"{sandbox_id}: command log requires agent-with-a-sandbox mode")
        with session.lock:
            session.command_counter += 1
            command_id = f"{sandbox_id}:c{session.command_counter:05d}"
            session.commands[command_id] = InFlightCommand(
                sandbox_id=sandbox_id,
                command_id=command_id,
                payload=payload,
                issued_at=self.clock.now(),
            )
            session.command_order.append(command_id)
            return command_id

    def complete_command(self, command_id: str) -> None:
        sandbox_id = command_id.split(":", 1)[0]
        session = self._sessions.get(sandbox_id)
        if session is None or command_id not in session.commands:
            raise UnknownCommand(command_id)
        with session.lock:
            session.commands[command_id].status = CommandStatus.COMPLETED

    def reissue_outstanding(self, sandbox_id: str) -> list[InFlightCommand]:
        """All still-outstanding commands, in issue order, for replay against
        the recovered sandbox."""
        session = self._session(sandbox_id)
        if session.mode is not AgentMode.WITH_SANDBOX:
            raise ModeMismatch(f"{sandbox_id}: command log requires agent-with-a-sandbox mode")
        with session.lock:
            return [
                session.commands[cid]
                for cid in session.command_order
                if session.commands[cid].status is CommandStatus.OUTSTANDING
            ]

    # -- fast-forward (agent-in-a-sandbox) --------------------------------------

    def begin_fast_forward(self, sandbox_id: str, restored_turn_index: int) -> int:
        """Arm replay after a restore whose process artifact is from turn
        `restored_turn_index`. Returns the new replay cursor; cached turns
        from there on are served synthetically as the stale agent replays
        them."""
        session = self._session(sandbox_id)
        with session.lock:
            cursor = restored_turn_index + 1
            if cursor > len(session.log.records):
                raise IndexBeyondLog(
                    f"{sandbox_id}: restored turn {restored_turn_index} beyond log"
                )
            if session.phase != _IDLE:
                # the crash interrupted a gated turn; the gate died with the sandbox
                session.phase = _IDLE
                session.current_turn = None
                session.outstanding_job = None
            session.log.replay_cursor = cursor
            return cursor

    # -- stats -------------------------------------------------------------------

    def session_stats(self, sandbox_id: str) -> dict:
        session = self._session(sandbox_id)
        with session.lock:
            return {
                "turns": len(session.log.records),
                "exposed_delay_total": session.exposed_delay_accumulator,
                "turn_delays": dict(session.turn_delays),
                "class_counts": {k.value: v for k, v in session.class_counts.items()},
                "llm_forwards": session.llm_forwards,
                "synthetic_served": session.synthetic_served,
                "jobs_submitted": session.jobs_submitted,
                "jobs_failed": session.jobs_failed,
            }

    def mode(self, sandbox_id: str) -> AgentMode:
        return self._session(sandbox_id).mode
