"""Acceptance gate: every criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. The heavy experiment runs are shared through session fixtures.
"""

import itertools
import random
import time

import pytest

from sandboxcr.backends.portable import PortableBackend
from sandboxcr.backends.simulated import SimulatedBackend
from sandboxcr.coordinator import AgentMode
from sandboxcr.engine import Engine, FaultInjector, ManifestStore
from sandboxcr.engine.jobs import Lifecycle
from sandboxcr.harness.bundled import bundled_trace
from sandboxcr.harness.metrics import percentile
from sandboxcr.harness.replay import ReplayConfig, run_replay, verify_recovery
from sandboxcr.harness.suite import make_recovery_suite
from sandboxcr.harness.trace import TraceGenSpec, gen_trace
from sandboxcr.netchange import CheckpointClass, fold_interval
from sandboxcr.simsandbox import CreateFile, SimSandbox, SpawnProc
from sandboxcr.statediff import MaterializedState, diff_states

from test_oracle_equivalence import _OPS, random_case


def report(criterion: int, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS - {detail}")


# --- shared experiment runs -------------------------------------------------


@pytest.fixture(scope="session")
def hetero_runs():
    trace = bundled_trace("heterogeneous")
    runs = {}
    for density in (16, 96):
        runs[density] = run_replay(
            trace.subset(density),
            None,
            ReplayConfig(backend="simulated", density=density, seed=1),
        )
    return runs


@pytest.fixture(scope="session")
def stress_runs():
    trace = bundled_trace("stress")
    runs = {}
    for scale in (0.2, 0.4, 0.6):
        for policy in ("reactive", "fifo"):
            runs[(scale, policy)] = run_replay(
                trace,
                None,
                ReplayConfig(
                    backend="simulated", density=96, seed=6, policy=policy,
                    wait_scale=scale, workers=4, stagger_s=2.0,
                ),
            )
    return runs


# --- criterion 1: net-change oracle equivalence --------------------------------


def test_criterion_1_oracle_equivalence():
    """>=10,000 random (state, events) pairs: classification equals the
    state-diff oracle on 100% of cases, within 60 s."""
    t0 = time.perf_counter()
    rng = random.Random(0xACCE01)
    cases = 10_000
    mismatches = 0
    for _ in range(cases):
        init_paths, init_pids, payloads = random_case(rng, max_events=20)
        before = MaterializedState.from_sets(init_paths, init_pids)
        after = before.copy().apply_all(payloads)
        oracle_paths, oracle_procs = diff_states(before, after)
        ops = [_OPS[type(p)](p) for p in payloads]
        fold_paths, fold_procs = fold_interval(
            ops, frozenset(init_paths), frozenset(init_pids), frozenset()
        )
        # full-report equality (implies classification equality): zero FP and FN
        if dict(sorted(fold_paths.items())) != oracle_paths or dict(sorted(fold_procs.items())) != oracle_procs:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    assert mismatches == 0
    assert elapsed < 60.0
    report(1, f"{cases} cases, 0 mismatches (0 FP, 0 FN), {elapsed:.1f}s")


# --- criterion 2: checkpoint sparsity ----------------------------------------


def test_criterion_2_sparsity(hetero_runs):
    spec = TraceGenSpec(
        tasks=8, turns=24, stateless_fraction=0.75, fs_fraction=0.125,
        proc_fraction=0.0625, seed=202, wait_median_ms=50,
    )
    metrics = run_replay(gen_trace(spec), None, ReplayConfig(density=8, seed=2))
    assert metrics.skip_ratio() == 0.75  # exact, per ground-truth annotations

    hetero_ratio = hetero_runs[96].skip_ratio()
    assert hetero_ratio >= 0.70
    report(2, f"generated skip ratio = 75% exactly; bundled heterogeneous = {hetero_ratio:.1%}")


# --- criterion 3: crash-recovery correctness -----------------------------------


def test_criterion_3_crash_recovery():
    t0 = time.perf_counter()
    trace, plan = make_recovery_suite(
        n_fast_forward=20, n_reissue=20, n_plain=10, turns=12, seed=1234
    )
    assert len(trace.tasks) == 50
    faulted, _ = verify_recovery(trace, plan, ReplayConfig(backend="portable", seed=33))
    elapsed = time.perf_counter() - t0
    recovered = [t for t in faulted.tasks if t.recovered_ok]
    ff = [t for t in faulted.tasks if any(f > p for p, f in t.restores)]
    reissued = [t for t in faulted.tasks if t.reissued > 0]
    assert len(recovered) == 50  # 100% state equality vs the no-fault run
    assert len(ff) >= 10
    assert len(reissued) >= 10
    assert elapsed < 300.0
    report(
        3,
        f"50/50 recovered exactly; {len(ff)} fast-forward tasks, "
        f"{len(reissued)} reissue tasks, {elapsed:.1f}s",
    )


# --- criterion 4: overlap effectiveness -----------------------------------------


def test_criterion_4_overlap(hetero_runs):
    f16 = hetero_runs[16].exposed_fractions()
    f96 = hetero_runs[96].exposed_fractions()
    p50_16 = percentile(f16, 50)
    p95_96 = percentile(f96, 95)
    assert p50_16 == 0.0  # median exposed-delay fraction is zero at density 16
    assert 0.0 < p95_96 < 0.10  # finite, same order as the reported 3.65%
    report(
        4,
        f"density 16 median fraction = {p50_16:.4f}; density 96 p95 fraction = "
        f"{p95_96:.2%} (paper 3.65%)",
    )


# --- criterion 5: reactive vs FIFO ------------------------------------------------


def test_criterion_5_reactive_vs_fifo(stress_runs):
    p50 = {
        key: percentile(metrics.exposed_delays(), 50) for key, metrics in stress_runs.items()
    }
    reactive, fifo = p50[(0.2, "reactive")], p50[(0.2, "fifo")]
    assert fifo > 0
    gain = 1 - reactive / fifo
    assert gain >= 0.20
    for scale in (0.2, 0.4, 0.6):
        assert p50[(scale, "reactive")] <= p50[(scale, "fifo")]  # never worse at p50
    report(
        5,
        f"wait-scale 0.2: reactive {reactive:.2f}s vs fifo {fifo:.2f}s "
        f"(-{gain:.1%}); never worse at 0.4/0.6",
    )


# --- criterion 6: transactional publication ---------------------------------------


def test_criterion_6_transactional_publication(tmp_path):
    FS, PROC, FULL = CheckpointClass.FS_ONLY, CheckpointClass.PROC_ONLY, CheckpointClass.FULL
    backend = PortableBackend(tmp_path / "blobs")
    rng = random.Random(0xACCE06)
    runs = 1000
    injected_failures = 0
    for case in range(runs):
        injector = FaultInjector(probability=0.3, seed=rng.randrange(2**31))
        engine = Engine(backend, ManifestStore(tmp_path / f"st{case}"), fault_injector=injector)
        sb = SimSandbox(f"s{case}", root=tmp_path / f"ws{case}", initial_procs={1: ("w", 10)})
        engine.register_sandbox(sb, capture_initial=True)
        pid = 10
        for turn in range(4):
            klass = rng.choice([FS, PROC, FULL])
            if klass in (FS, FULL):
                sb.apply([CreateFile(f"/f{turn}", bytes([turn, case % 256]))])
            if klass in (PROC, FULL):
                sb.apply([SpawnProc(pid, footprint=turn + 1)])
                pid += 1
            job = engine.submit(f"s{case}", turn, klass, turn + 1)
            engine.next_job()
            engine.run_job(job)
            assert job.lifecycle in (Lifecycle.DONE, Lifecycle.FAILED)
            if job.lifecycle is Lifecycle.FAILED:
                injected_failures += 1
        stats = engine.job_stats()
        assert stats["submitted"] == stats["done"] + stats["failed"]  # queue conservation
        assert stats["queued_normal"] == stats["queued_high"] == stats["in_flight"] == 0
        for manifest in engine.list_versions(f"s{case}"):
            scratch = SimSandbox(
                f"x{case}v{manifest.version_id}", root=tmp_path / f"x{case}v{manifest.version_id}"
            )
            engine.register_sandbox(scratch, capture_initial=False)
            engine.restore(  # any listed version must restore cleanly
                f"s{case}", manifest.version_id, target_sandbox_id=scratch.sandbox_id
            )
    assert injected_failures > 0  # the injection actually exercised failure paths
    report(
        6,
        f"{runs} randomized runs, {injected_failures} failed jobs, "
        f"0 listed-but-unrestorable versions",
    )


# --- criterion 7: versioning semantics -----------------------------------------------


def test_criterion_7_versioning_semantics(tmp_path):
    FS, PROC, FULL = CheckpointClass.FS_ONLY, CheckpointClass.PROC_ONLY, CheckpointClass.FULL
    SKIP = CheckpointClass.SKIP

    def run_sequence(combo, where, capture_initial):
        engine = Engine(SimulatedBackend(), ManifestStore(where / "store"))
        sb = SimSandbox("s", root=None, initial_procs={1: ("w", 10)})
        engine.register_sandbox(sb, capture_initial=capture_initial)
        pid = 40
        for turn, klass in enumerate(combo):
            if klass is SKIP:
                continue
            if klass in (FS, FULL):
                sb.apply([CreateFile(f"/t{turn}", b"x")])
            if klass in (PROC, FULL):
                sb.apply([SpawnProc(pid)])
                pid += 1
            job = engine.submit("s", turn, klass, turn + 1)
            engine.next_job()
            engine.run_job(job)
        return engine.list_versions("s")

    # the worked example: Full@0, FsOnly@1, Skip@2 -> exactly (P0,F0), (P0,F1)
    versions = run_sequence([FULL, FS, SKIP], tmp_path / "worked", capture_initial=False)
    assert [(m.proc_turn, m.fs_turn) for m in versions] == [(0, 0), (0, 1)]
    assert [m.version_id for m in versions] == [0, 1]

    # exhaustive 4-class x 3-turn sequences over the initial capture:
    # pairing rule and monotonicity hold along every chain
    checked = 0
    for combo in itertools.product((SKIP, FS, PROC, FULL), repeat=3):
        where = tmp_path / "-".join(k.value for k in combo)
        versions = run_sequence(combo, where, capture_initial=True)
        stateful = [(t, k) for t, k in enumerate(combo) if k is not SKIP]
        assert len(versions) == 1 + len(stateful)
        latest_proc = latest_fs = -1
        prev = versions[0]
        assert (prev.proc_turn, prev.fs_turn) == (-1, -1)
        for m, (turn, klass) in zip(versions[1:], stateful):
            if klass in (PROC, FULL):
                latest_proc = turn
            if klass in (FS, FULL):
                latest_fs = turn
            assert m.proc_turn == latest_proc  # paired with the newest artifact
            assert m.fs_turn == latest_fs
            assert m.covers_turn == turn >= max(m.proc_turn, m.fs_turn)
            if klass in (FS, FULL):
                assert m.fs_turn >= m.proc_turn
            assert m.version_id == prev.version_id + 1
            assert m.parent_version == prev.version_id
            assert (m.proc_turn, m.fs_turn) >= (prev.proc_turn, prev.fs_turn)
            prev = m
        checked += 1
    assert checked == 64
    report(7, f"worked example chain exact; {checked} exhaustive sequences respect pairing")


# --- criterion 8: backend round-trip ---------------------------------------------------


def test_criterion_8_backend_round_trip(tmp_path):
    backend = PortableBackend(tmp_path / "blobs")
    rng = random.Random(0xACCE08)
    cases = 40
    for case in range(cases):
        root = tmp_path / f"src{case}"
        root.mkdir()
        n_files = rng.randint(0, 100)
        for i in range(n_files):
            rel = "/".join(rng.choices("abcde", k=rng.randint(1, 3))) + f"-{i}"
            size = rng.randint(0, 1_000_000) if rng.random() < 0.05 else rng.randint(0, 4096)
            full = root / rel
            full.parent.mkdir(parents=True, exist_ok=True)
            full.write_bytes(rng.randbytes(size))
        registry = {
            pid: ("proc", rng.randrange(10**9)) for pid in rng.sample(range(1, 1000), rng.randint(0, 8))
        }
        src = SimSandbox(f"s{case}", root=root, initial_procs=registry)
        fs_art = backend.snapshot_fs(src)
        proc_art = backend.snapshot_proc(src)
        blobs_before = backend.blob_count()
        again = backend.snapshot_fs(src)
        assert again.handle == fs_art.handle  # identical state, identical manifest
        assert backend.blob_count() == blobs_before  # zero new blobs
        dest = SimSandbox(f"d{case}", root=tmp_path / f"dest{case}")
        backend.restore_fs(fs_art.handle, dest)
        backend.restore_proc(proc_art.handle, dest)
        assert dest.tree_hash() == src.tree_hash()
        assert dest.registry == src.registry
    report(8, f"{cases} random trees + registries: round-trip identity, incremental blobs")


# --- criterion 9: coordinator overhead ----------------------------------------------


def test_criterion_9_coordinator_overhead(tmp_path):
    import threading
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    import http.client

    from sandboxcr.clock import RealClock
    from sandboxcr.coordinator import Coordinator
    from sandboxcr.inspector import Inspector
    from sandboxcr.proxy import LlmProxy, ProxyConfig

    class Upstream(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            self.rfile.read(length)
            self.send_response(200)
            self.send_header("Content-Length", "2")
            self.end_headers()
            self.wfile.write(b"ok")

    upstream = ThreadingHTTPServer(("127.0.0.1", 0), Upstream)
    threading.Thread(target=upstream.serve_forever, daemon=True).start()

    clock = RealClock()
    inspector = Inspector()
    engine = Engine(SimulatedBackend(), ManifestStore(tmp_path / "store"), clock=clock,
                    inspector=inspector)
    coordinator = Coordinator(inspector, engine, clock=clock)
    proxy = LlmProxy(
        coordinator,
        ProxyConfig(upstream_host=upstream.server_address[0], upstream_port=upstream.server_address[1]),
    )
    host, port = proxy.start()

    density, turns = 16, 40
    for i in range(density):
        sid = f"sb{i:02d}"
        sb = SimSandbox(sid, root=None, emit=inspector.ingest_event)
        inspector.register_sandbox(sid)
        engine.register_sandbox(sb, capture_initial=False)
        coordinator.register_sandbox(sid, AgentMode.IN_SANDBOX)

    def agent(sid):
        conn = http.client.HTTPConnection(host, port, timeout=30)
        for t in range(turns):
            body = f"{sid}-turn-{t}".encode()
            conn.request("POST", "/v1/chat", body=body, headers={"X-Sandbox-Id": sid})
            resp = conn.getresponse()
            assert resp.status == 200
            resp.read()
        conn.close()

    threads = [threading.Thread(target=agent, args=(f"sb{i:02d}",)) for i in range(density)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    upstream.shutdown()
    proxy.stop()

    values = proxy.overhead_values()
    assert len(values) == density * turns
    median_ms = percentile(values, 50) * 1e3
    assert median_ms < 1.0  # pass-through Skip turns add under a millisecond
    report(
        9,
        f"{density} sandboxes x {turns} Skip turns: median coordinator overhead "
        f"{median_ms * 1e3:.0f} us (p95 {percentile(values, 95) * 1e3:.3f} ms)",
    )
