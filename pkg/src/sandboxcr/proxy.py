"""Transparent HTTP reverse proxy on the agent-to-LLM path.

Bodies are opaque bytes: the proxy intercepts at request egress (turn
boundary, checkpoint dispatch) and response ingress (completion gate),
then passes traffic through unchanged. Sandbox identity comes from a
header or from a per-port binding.

Per-turn interception overhead (everything except the upstream round trip
and any gate hold) is recorded for the overhead experiments.
"""

from __future__ import annotations

import http.client
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .conversation import Request, Response
from .coordinator import AgentMode, Coordinator, SyntheticResponse, HeldUntil
from .errors import SandboxCrError, UnknownSandbox

_HOP_HEADERS = {
    "connection",
    "content-length",
    "host",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailers",
    "transfer-encoding",
    "upgrade",
}


@dataclass
class ProxyConfig:
    upstream_host: str
    upstream_port: int
    sandbox_header: str = "X-Sandbox-Id"
    port_bindings: dict[int, str] = field(default_factory=dict)
    mode: AgentMode = AgentMode.IN_SANDBOX  # deployment mode for new sandbox ids
    gate_timeout_s: float = 60.0


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet
        pass

    def do_GET(self) -> None:
        self._handle()

    def do_POST(self) -> None:
        self._handle()

    def _sandbox_id(self) -> Optional[str]:
        proxy: LlmProxy = self.server.proxy  # type: ignore[attr-defined]
        sid = self.headers.get(proxy.config.sandbox_header)
        if sid:
            return sid
        return proxy.config.port_bindings.get(self.server.server_address[1])

    def _respond(self, status: int, body: bytes, headers: Optional[dict] = None) -> None:
        self.send_response(status)
        for k, v in (headers or {}).items():
            if k.lower() not in _HOP_HEADERS:
                self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _handle(self) -> None:
        proxy: LlmProxy = self.server.proxy  # type: ignore[attr-defined]
        coordinator = proxy.coordinator
        sandbox_id = self._sandbox_id()
        if not sandbox_id:
            self._respond(400, b"missing sandbox id")
            return
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        request = Request(
            body=body,
            method=self.command,
            path=self.path,
            headers={k: v for k, v in self.headers.items()},
        )
        t0 = time.perf_counter()
        try:
            try:
                decision = coordinator.on_outbound_request(sandbox_id, request)
            except UnknownSandbox:
                if proxy.register_hook is None:
                    raise
                # first sight of this sandbox id: let the host wire it up
                proxy.register_hook(sandbox_id, proxy.config.mode)
                decision = coordinator.on_outbound_request(sandbox_id, request)
        except SandboxCrError as exc:
            self._respond(409, f"{type(exc).__name__}: {exc}".encode())
            return
        egress = time.perf_counter() - t0
        if isinstance(decision, SyntheticResponse):
            proxy.record_overhead(sandbox_id, decision.turn_index, egress)
            self._respond(200, decision.body, {"X-Sandboxcr-Replayed": "1"})
            return

        status, resp_headers, resp_body = proxy.forward_upstream(request)

        t1 = time.perf_counter()
        try:
            release = coordinator.on_llm_response(sandbox_id, Response(body=resp_body, status=status))
        except SandboxCrError as exc:
            self._respond(502, f"{type(exc).__name__}: {exc}".encode())
            return
        ingress = time.perf_counter() - t1
        proxy.record_overhead(sandbox_id, decision.turn_index, egress + ingress)
        if isinstance(release, HeldUntil):
            # completion gate: the hold is exposed delay, not proxy overhead
            coordinator.wait_for_release(sandbox_id, timeout=proxy.config.gate_timeout_s)
        self._respond(status, resp_body, resp_headers)


class LlmProxy:
    def __init__(
        self,
        coordinator: Coordinator,
        config: ProxyConfig,
        host: str = "127.0.0.1",
        port: int = 0,
        register_hook=None,
    ) -> None:
        """`register_hook(sandbox_id, mode)` is called on traffic from an
        unknown sandbox id so the host can wire up inspector/engine/
        coordinator state; without one, unknown ids are rejected."""
        self.coordinator = coordinator
        self.config = config
        self.register_hook = register_hook
        self._server = ThreadingHTTPServer((host, port), _Handler)
        self._server.daemon_threads = True
        self._server.proxy = self  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None
        self._overhead_lock = threading.Lock()
        self.overhead_samples: list[tuple[str, int, float]] = []

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> tuple[str, int]:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self.address

    def stop(self) -> None:
        self._server.shutdown()
        if self._thread:
            self._thread.join(timeout=5)
        self._server.server_close()

    def record_overhead(self, sandbox_id: str, turn_index: int, seconds: float) -> None:
        with self._overhead_lock:
            self.overhead_samples.append((sandbox_id, turn_index, seconds))

    def overhead_values(self) -> list[float]:
        with self._overhead_lock:
            return [s for _, _, s in self.overhead_samples]

    def forward_upstream(self, request: Request) -> tuple[int, dict, bytes]:
        conn = http.client.HTTPConnection(
            self.config.upstream_host, self.config.upstream_port, timeout=30
        )
        try:
            headers = {
                k: v for k, v in request.headers.items() if k.lower() not in _HOP_HEADERS
            }
            conn.request(request.method, request.path, body=request.body, headers=headers)
            resp = conn.getresponse()
            body = resp.read()
            return resp.status, dict(resp.getheaders()), body
        finally:
            conn.close()
