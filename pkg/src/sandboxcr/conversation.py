"""Persistent conversation log: the turn-aligned request/response history.

Records are append-only. A turn is written as two rows keyed by
(sandbox_id, turn_index): the request row at interception, the response row
when the reply lands. Nothing is ever rewritten, which is what makes the log
usable as replay history after a restore.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


@dataclass
class Request:
    body: bytes
    method: str = "POST"
    path: str = "/v1/completions"
    headers: dict[str, str] = field(default_factory=dict)


@dataclass
class Response:
    body: bytes
    status: int = 200
    headers: dict[str, str] = field(default_factory=dict)


def request_digest(request: Request) -> str:
    """Replay-matching key: method + path + body.

    Headers are excluded entirely; the volatile ones (date, auth, trace ids)
    must never affect replay matching and the rest add nothing for bodies
    that are already complete.
    """
    h = hashlib.sha256()
    h.update(request.method.encode())
    h.update(b"\x00")
    h.update(request.path.encode())
    h.update(b"\x00")
    h.update(request.body)
    return h.hexdigest()


@dataclass
class TurnRecord:
    sandbox_id: str
    turn_index: int
    request_digest: str
    request_body: bytes
    completed_at_seq: int
    response_body: Optional[bytes] = None

    @property
    def complete(self) -> bool:
        return self.response_body is not None


class ConversationLog:
    """Per-sandbox append-only turn history with a replay cursor."""

    def __init__(self, sandbox_id: str, log_dir: Optional[Path] = None) -> None:
        self.sandbox_id = sandbox_id
        self.records: list[TurnRecord] = []
        self.replay_cursor = 0
        self._path = (Path(log_dir) / f"{sandbox_id}.jsonl") if log_dir else None
        self._lock = threading.Lock()
        if self._path and self._path.exists():
            self._load()

    def __len__(self) -> int:
        return len(self.records)

    def append_request(self, record: TurnRecord) -> None:
        with self._lock:
            if record.turn_index != len(self.records):
                raise ValueError(
                    f"turn {record.turn_index} out of order (log length {len(self.records)})"
                )
            self.records.append(record)
            self._write(
                {
                    "sandbox": record.sandbox_id,
                    "turn": record.turn_index,
                    "row": "request",
                    "digest": record.request_digest,
                    "request": base64.b64encode(record.request_body).decode(),
                    "seq": record.completed_at_seq,
                }
            )

    def set_response(self, turn_index: int, body: bytes) -> None:
        with self._lock:
            record = self.records[turn_index]
            if record.response_body is not None:
                raise ValueError(f"turn {turn_index} already has a response")
            record.response_body = body
            self._write(
                {
                    "sandbox": record.sandbox_id,
                    "turn": turn_index,
                    "row": "response",
                    "response": base64.b64encode(body).decode(),
                }
            )

    def _write(self, row: dict) -> None:
        if self._path is None:
            return
        self._path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._path, "a") as fp:
            fp.write(json.dumps(row, sort_keys=True) + "\n")

    def _load(self) -> None:
        for line in self._path.read_text().splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            if row["row"] == "request":
                self.records.append(
                    TurnRecord(
                        sandbox_id=row["sandbox"],
                        turn_index=row["turn"],
                        request_digest=row["digest"],
                        request_body=base64.b64decode(row["request"]),
                        completed_at_seq=row["seq"],
                    )
                )
            else:
                self.records[row["turn"]].response_body = base64.b64decode(row["response"])
