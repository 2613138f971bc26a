"""HTTP proxy interface: pass-through, interception, gating, replay serving."""

import http.client
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from sandboxcr.backends.simulated import SimulatedBackend
from sandboxcr.clock import RealClock
from sandboxcr.coordinator import AgentMode, Coordinator
from sandboxcr.engine import Engine, ManifestStore, WorkerThreadPool
from sandboxcr.inspector import Inspector
from sandboxcr.proxy import LlmProxy, ProxyConfig
from sandboxcr.simsandbox import CreateFile, SimSandbox


class _Upstream(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        reply = json.dumps({"echo": body.decode(), "path": self.path}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)


@pytest.fixture
def upstream():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Upstream)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server.server_address
    server.shutdown()
    server.server_close()


@pytest.fixture
def stack(tmp_path, upstream):
    clock = RealClock()
    inspector = Inspector()
    engine = Engine(SimulatedBackend(), ManifestStore(tmp_path / "store"), clock=clock,
                    inspector=inspector)
    pool = WorkerThreadPool(engine, workers=2)
    pool.start()
    coordinator = Coordinator(inspector, engine, clock=clock)
    proxy = LlmProxy(coordinator, ProxyConfig(upstream_host=upstream[0], upstream_port=upstream[1]))
    host, port = proxy.start()
    sandboxes = {}

    def add_sandbox(sid, mode=AgentMode.IN_SANDBOX):
        sb = SimSandbox(sid, root=None, emit=inspector.ingest_event, initial_procs={1: ("w", 100)})
        inspector.register_sandbox(sid, preexisting_pids=[1])
        engine.register_sandbox(sb, capture_initial=False)
        coordinator.register_sandbox(sid, mode)
        sandboxes[sid] = sb
        return sb

    yield {
        "proxy": proxy,
        "host": host,
        "port": port,
        "coordinator": coordinator,
        "engine": engine,
        "add_sandbox": add_sandbox,
        "sandboxes": sandboxes,
    }
    proxy.stop()
    pool.stop()


def post(host, port, body, sandbox_id=None, path="/v1/chat"):
    conn = http.client.HTTPConnection(host, port, timeout=10)
    headers = {"Content-Type": "application/json"}
    if sandbox_id:
        headers["X-Sandbox-Id"] = sandbox_id
    conn.request("POST", path, body=body, headers=headers)
    resp = conn.getresponse()
    data = resp.read()
    conn.close()
    return resp.status, data


def test_pass_through_and_turn_logging(stack):
    stack["add_sandbox"]("sb1")
    status, data = post(stack["host"], stack["port"], b"hello-llm", "sb1")
    assert status == 200
    assert json.loads(data)["echo"] == "hello-llm"
    log = stack["coordinator"].conversation("sb1")
    assert len(log.records) == 1
    assert log.records[0].response_body == data


def test_missing_sandbox_id_rejected(stack):
    status, data = post(stack["host"], stack["port"], b"x")
    assert status == 400


def test_unregistered_sandbox_rejected(stack):
    status, data = post(stack["host"], stack["port"], b"x", "ghost")
    assert status == 409
    assert b"UnknownSandbox" in data


def test_stateful_turn_gates_through_proxy(stack):
    sb = stack["add_sandbox"]("sb2")
    stack["engine"].register_sandbox  # engine already has it
    sb.apply([CreateFile("/made", b"x")])
    status, data = post(stack["host"], stack["port"], b"turn-with-state", "sb2")
    assert status == 200
    stats = stack["coordinator"].session_stats("sb2")
    assert stats["jobs_submitted"] == 1
    job = stack["engine"].jobs_snapshot()[-1]
    assert job.lifecycle.value in ("done", "failed")


def test_replay_serves_cached_without_upstream(stack, upstream):
    stack["add_sandbox"]("sb3")
    status, first = post(stack["host"], stack["port"], b"same-request", "sb3")
    assert status == 200
    stack["coordinator"].begin_fast_forward("sb3", -1)
    before = stack["coordinator"].session_stats("sb3")["llm_forwards"]
    status, second = post(stack["host"], stack["port"], b"same-request", "sb3")
    assert status == 200
    assert second == first
    assert stack["coordinator"].session_stats("sb3")["llm_forwards"] == before


def test_divergent_replay_surfaces_409(stack):
    stack["add_sandbox"]("sb4")
    post(stack["host"], stack["port"], b"original", "sb4")
    stack["coordinator"].begin_fast_forward("sb4", -1)
    status, data = post(stack["host"], stack["port"], b"diverged", "sb4")
    assert status == 409
    assert b"DigestMismatchDuringReplay" in data


def test_port_binding_extraction(tmp_path, upstream):
    clock = RealClock()
    inspector = Inspector()
    engine = Engine(SimulatedBackend(), ManifestStore(tmp_path / "s2"), clock=clock,
                    inspector=inspector)
    coordinator = Coordinator(inspector, engine, clock=clock)
    sb = SimSandbox("bound", root=None, emit=inspector.ingest_event)
    inspector.register_sandbox("bound")
    engine.register_sandbox(sb, capture_initial=False)
    coordinator.register_sandbox("bound", AgentMode.IN_SANDBOX)
    proxy = LlmProxy(
        coordinator,
        ProxyConfig(upstream_host=upstream[0], upstream_port=upstream[1], port_bindings={}),
    )
    host, port = proxy.start()
    proxy.config.port_bindings[port] = "bound"
    try:
        status, _ = post(host, port, b"no-header-needed")
        assert status == 200
        assert len(coordinator.conversation("bound").records) == 1
    finally:
        proxy.stop()


def test_register_hook_wires_unknown_sandboxes(stack):
    coordinator = stack["coordinator"]
    proxy = stack["proxy"]
    seen = []

    def hook(sid, mode):
        stack["add_sandbox"](sid, mode)
        seen.append((sid, mode))

    proxy.register_hook = hook
    try:
        status, _ = post(stack["host"], stack["port"], b"first contact", "fresh-sb")
        assert status == 200
        assert seen == [("fresh-sb", proxy.config.mode)]
        assert len(coordinator.conversation("fresh-sb").records) == 1
    finally:
        proxy.register_hook = None


def test_overhead_samples_recorded(stack):
    stack["add_sandbox"]("sb5")
    for i in range(5):
        post(stack["host"], stack["port"], f"turn-{i}".encode(), "sb5")
    values = stack["proxy"].overhead_values()
    assert len(values) == 5
    assert all(v >= 0 for v in values)
