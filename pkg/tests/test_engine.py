"""Engine: scheduler semantics, lifecycle, versioned manifests, restore/fork,
and transactional publication under injected faults."""

import random

import pytest

from sandboxcr.backends.portable import PortableBackend
from sandboxcr.backends.simulated import SimulatedBackend
from sandboxcr.clock import EventLoop
from sandboxcr.engine import Engine, FaultInjector, ManifestStore, VirtualWorkerDriver
from sandboxcr.engine.jobs import Lifecycle, Priority
from sandboxcr.errors import (
    BackendFailure,
    DuplicateTurnJob,
    MissingCounterpart,
    UnknownJob,
    UnknownVersion,
)
from sandboxcr.netchange import CheckpointClass
from sandboxcr.simsandbox import CreateFile, SimSandbox, SpawnProc, TouchMemory, WriteFile

FS = CheckpointClass.FS_ONLY
PROC = CheckpointClass.PROC_ONLY
FULL = CheckpointClass.FULL


def make_engine(tmp_path, capture_initial=True, reactive=True, injector=None, n_sandboxes=1):
    backend = SimulatedBackend()
    store = ManifestStore(tmp_path / "store")
    engine = Engine(backend, store, reactive=reactive, fault_injector=injector)
    sandboxes = []
    for i in range(n_sandboxes):
        sb = SimSandbox(f"s{i}", root=None, initial_procs={1: ("w", 1000)})
        engine.register_sandbox(sb, capture_initial=capture_initial)
        sandboxes.append(sb)
    return engine, sandboxes


def run_one(engine, job):
    picked = engine.next_job()
    assert picked.job_id == job.job_id
    engine.run_job(picked)
    return picked


class TestSubmitAndQueues:
    def test_submit_enters_normal_queue_pending(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        job = engine.submit("s0", 0, FS, 1)
        assert job.lifecycle is Lifecycle.PENDING
        assert engine.scheduler.depths() == (1, 0)

    def test_duplicate_turn_rejected(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        engine.submit("s0", 0, FS, 1)
        with pytest.raises(DuplicateTurnJob):
            engine.submit("s0", 0, FULL, 1)

    def test_resubmit_allowed_after_failure(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        job = engine.submit("s0", 0, FS, 1)
        engine.next_job()
        engine.fail_job(job.job_id, "boom")
        engine.submit("s0", 0, FS, 1)  # no raise

    def test_skip_not_submittable(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        with pytest.raises(ValueError):
            engine.submit("s0", 0, CheckpointClass.SKIP, 1)

    def test_fifo_arrival_order_across_sandboxes(self, tmp_path):
        engine, _ = make_engine(tmp_path, n_sandboxes=3)
        jobs = [engine.submit(f"s{i}", 0, FS, 1) for i in range(3)]
        picked = [engine.next_job().job_id for _ in range(3)]
        assert picked == [j.job_id for j in jobs]


class TestPromotion:
    def test_promote_moves_pending_to_high(self, tmp_path):
        engine, _ = make_engine(tmp_path, n_sandboxes=2)
        a = engine.submit("s0", 0, FS, 1)
        b = engine.submit("s1", 0, FS, 1)
        engine.promote(b.job_id)
        assert b.priority is Priority.HIGH
        assert engine.next_job().job_id == b.job_id  # high queue preferred
        assert engine.next_job().job_id == a.job_id

    def test_promote_while_dumping_is_noop(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        job = engine.submit("s0", 0, FS, 1)
        engine.next_job()
        engine.promote(job.job_id)
        assert job.priority is Priority.NORMAL
        engine.run_job(job)
        assert job.lifecycle is Lifecycle.DONE

    def test_promote_idempotent(self, tmp_path):
        engine, _ = make_engine(tmp_path, n_sandboxes=2)
        engine.submit("s0", 0, FS, 1)
        b = engine.submit("s1", 0, FS, 1)
        engine.promote(b.job_id)
        engine.promote(b.job_id)
        assert engine.scheduler.depths() == (1, 1)

    def test_promote_unknown_job(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        with pytest.raises(UnknownJob):
            engine.promote("j-nope")

    def test_fifo_policy_ignores_promotion(self, tmp_path):
        engine, _ = make_engine(tmp_path, reactive=False, n_sandboxes=2)
        a = engine.submit("s0", 0, FS, 1)
        b = engine.submit("s1", 0, FS, 1)
        engine.promote(b.job_id)
        assert engine.next_job().job_id == a.job_id


class TestNextJob:
    def test_empty_queues_yield_none(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        assert engine.next_job() is None

    def test_pop_transitions_to_dumping(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        job = engine.submit("s0", 0, FS, 1)
        picked = engine.next_job()
        assert picked.lifecycle is Lifecycle.DUMPING
        assert picked.job_id in engine.in_flight


class TestVersioning:
    def test_worked_example_full_then_fsonly_then_skip(self, tmp_path):
        """Full@0, FsOnly@1, Skip@2 -> exactly (P0,F0), (P0,F1)."""
        engine, (sb,) = make_engine(tmp_path, capture_initial=False)
        run_one(engine, engine.submit("s0", 0, FULL, 1))
        sb.apply([CreateFile("/new", b"x")])
        run_one(engine, engine.submit("s0", 1, FS, 2))
        # skip turn: nothing submitted
        versions = engine.list_versions("s0")
        assert [(m.proc_turn, m.fs_turn) for m in versions] == [(0, 0), (0, 1)]
        assert [m.version_id for m in versions] == [0, 1]
        assert versions[1].proc_artifact == versions[0].proc_artifact
        assert versions[1].parent_version == 0

    def test_proconly_pairs_latest_fs(self, tmp_path):
        engine, (sb,) = make_engine(tmp_path, capture_initial=False)
        run_one(engine, engine.submit("s0", 0, FULL, 1))
        sb.apply([CreateFile("/f3", b"x")])
        run_one(engine, engine.submit("s0", 3, FS, 2))
        sb.apply([TouchMemory(1)])
        run_one(engine, engine.submit("s0", 5, PROC, 3))
        last = engine.list_versions("s0")[-1]
        assert (last.proc_turn, last.fs_turn) == (5, 3)
        assert last.covers_turn == 5

    def test_initial_capture_publishes_v0(self, tmp_path):
        engine, _ = make_engine(tmp_path, capture_initial=True)
        versions = engine.list_versions("s0")
        assert len(versions) == 1
        assert (versions[0].proc_turn, versions[0].fs_turn) == (-1, -1)

    def test_partial_without_counterpart_fails(self, tmp_path):
        engine, _ = make_engine(tmp_path, capture_initial=False)
        job = engine.submit("s0", 0, FS, 1)
        engine.next_job()
        engine.execute(job.job_id)
        with pytest.raises(MissingCounterpart):
            engine.publish(job.job_id)
        assert job.lifecycle is Lifecycle.FAILED
        assert engine.list_versions("s0") == []

    def test_exhaustive_three_turn_sequences(self, tmp_path):
        """Pairing rule and monotonicity across all 4^3 class sequences."""
        import itertools

        classes = [CheckpointClass.SKIP, FS, PROC, FULL]
        for combo in itertools.product(classes, repeat=3):
            store_dir = tmp_path / "-".join(c.value for c in combo)
            backend = SimulatedBackend()
            engine = Engine(backend, ManifestStore(store_dir))
            sb = SimSandbox("s", root=None, initial_procs={1: ("w", 10)})
            engine.register_sandbox(sb, capture_initial=True)
            pid = 50
            for turn, klass in enumerate(combo):
                if klass is CheckpointClass.SKIP:
                    continue
                if klass in (FS, FULL):
                    sb.apply([CreateFile(f"/t{turn}", b"x")])
                if klass in (PROC, FULL):
                    sb.apply([SpawnProc(pid)])
                    pid += 1
                job = engine.submit("s", turn, klass, turn + 1)
                run_one(engine, job)
            versions = engine.list_versions("s")
            stateful = [(t, k) for t, k in enumerate(combo) if k is not CheckpointClass.SKIP]
            assert len(versions) == 1 + len(stateful)
            prev = None
            latest_proc, latest_fs = -1, -1
            for m, (turn, klass) in zip(versions[1:], stateful):
                # pairing rule: new artifact for the dumped kind, latest
                # counterpart for the other
                if klass in (PROC, FULL):
                    assert m.proc_turn == turn
                    latest_proc = turn
                else:
                    assert m.proc_turn == latest_proc
                if klass in (FS, FULL):
                    assert m.fs_turn == turn
                    latest_fs = turn
                else:
                    assert m.fs_turn == latest_fs
                assert m.covers_turn == turn
                assert m.covers_turn >= max(m.proc_turn, m.fs_turn)
                if klass in (FS, FULL):
                    assert m.fs_turn >= m.proc_turn
                if prev is not None:
                    assert m.version_id == prev.version_id + 1
                    assert m.proc_turn >= prev.proc_turn
                    assert m.fs_turn >= prev.fs_turn
                    assert m.parent_version == prev.version_id
                prev = m


class TestExecuteFailures:
    def test_backend_fault_fails_job_and_discards(self, tmp_path):
        injector = FaultInjector(probability=1.0, seed=1, stages=("fs_snapshot",))
        engine, _ = make_engine(tmp_path, injector=injector)
        job = engine.submit("s0", 0, FS, 1)
        engine.next_job()
        with pytest.raises(BackendFailure):
            engine.execute(job.job_id)
        assert job.lifecycle is Lifecycle.FAILED
        assert job.staged == []
        assert len(engine.list_versions("s0")) == 1  # only the initial capture

    def test_terminal_notification_fires_once(self, tmp_path):
        engine, _ = make_engine(tmp_path)
        seen = []
        engine.add_terminal_listener(lambda j: seen.append(j.job_id))
        job = engine.submit("s0", 0, FS, 1)
        engine.next_job()
        engine.run_job(job)
        engine.fail_job(job.job_id, "late")  # terminal already; must not refire
        assert seen == [job.job_id]
        assert job.lifecycle is Lifecycle.DONE


class TestRestoreAndFork:
    def setup_engine(self, tmp_path):
        backend = PortableBackend(tmp_path / "blobs")
        store = ManifestStore(tmp_path / "store")
        engine = Engine(backend, store)
        sb = SimSandbox("src", root=tmp_path / "src", initial_procs={1: ("w", 10)})
        engine.register_sandbox(sb, capture_initial=True)
        return engine, sb

    def test_rollback_restores_bytes_and_registry(self, tmp_path):
        engine, sb = self.setup_engine(tmp_path)
        sb.apply([CreateFile("/keep", b"v1"), SpawnProc(9, footprint=5)])
        run_one(engine, engine.submit("src", 0, FULL, 2))
        want_hash = sb.tree_hash()
        want_registry = dict(sb.registry)
        sb.apply([WriteFile("/keep", b"v2"), CreateFile("/junk", b"z")])
        sb.crash()
        report = engine.restore("src", engine.list_versions("src")[-1].version_id)
        assert sb.alive
        assert sb.tree_hash() == want_hash
        assert sb.registry == want_registry
        assert report.proc_turn == 0 and report.fs_turn == 0

    def test_fork_leaves_source_untouched(self, tmp_path):
        engine, sb = self.setup_engine(tmp_path)
        sb.apply([CreateFile("/base", b"b")])
        run_one(engine, engine.submit("src", 0, FS, 2))
        src_hash = sb.tree_hash()
        fork = SimSandbox("fork", root=tmp_path / "fork")
        engine.register_sandbox(fork, capture_initial=False)
        engine.restore("src", engine.list_versions("src")[-1].version_id, target_sandbox_id="fork")
        assert fork.tree_hash() == src_hash
        fork.apply([CreateFile("/divergent", b"d")])
        assert sb.tree_hash() == src_hash  # isolation

    def test_unknown_version(self, tmp_path):
        engine, _ = self.setup_engine(tmp_path)
        with pytest.raises(UnknownVersion):
            engine.restore("src", 999)


class TestTransactionalPublication:
    def test_randomized_fault_injection(self, tmp_path):
        """Every listed manifest restores; every job lands in Done/Failed."""
        rng = random.Random(2024)
        for case in range(40):
            injector = FaultInjector(probability=0.3, seed=rng.randrange(2**31))
            backend = PortableBackend(tmp_path / f"b{case}")
            store = ManifestStore(tmp_path / f"st{case}")
            engine = Engine(backend, store, fault_injector=injector)
            sb = SimSandbox(f"s{case}", root=tmp_path / f"ws{case}", initial_procs={1: ("w", 10)})
            engine.register_sandbox(sb, capture_initial=True)
            hashes = {-1: (sb.tree_hash(), dict(sb.registry))}
            pid = 10
            for turn in range(6):
                klass = rng.choice([FS, PROC, FULL])
                if klass in (FS, FULL):
                    sb.apply([CreateFile(f"/f{turn}", bytes([turn]))])
                if klass in (PROC, FULL):
                    sb.apply([SpawnProc(pid, footprint=turn + 1)])
                    pid += 1
                job = engine.submit(f"s{case}", turn, klass, turn + 1)
                engine.next_job()
                engine.run_job(job)
                assert job.lifecycle in (Lifecycle.DONE, Lifecycle.FAILED)
                hashes[turn] = (sb.tree_hash(), dict(sb.registry))
            stats = engine.job_stats()
            assert stats["submitted"] == stats["done"] + stats["failed"]
            assert stats["queued_normal"] == stats["queued_high"] == stats["in_flight"] == 0
            # every published version must restore onto a scratch target
            for manifest in engine.list_versions(f"s{case}"):
                scratch = SimSandbox(
                    f"scratch{case}-{manifest.version_id}",
                    root=tmp_path / f"scr{case}-{manifest.version_id}",
                )
                engine.register_sandbox(scratch, capture_initial=False)
                engine.restore(f"s{case}", manifest.version_id, target_sandbox_id=scratch.sandbox_id)
                # a Full manifest's state must equal the live state at its turn
                if manifest.proc_turn == manifest.fs_turn == manifest.covers_turn:
                    want_hash, want_reg = hashes[manifest.covers_turn]
                    assert scratch.tree_hash() == want_hash
                    assert scratch.registry == want_reg


def test_virtual_driver_runs_jobs_to_done(tmp_path):
    loop = EventLoop()
    backend = SimulatedBackend(loop=loop)
    engine = Engine(backend, ManifestStore(tmp_path / "store"), clock=loop)
    VirtualWorkerDriver(engine, loop, slots=2)
    sb = SimSandbox("s", root=None, initial_procs={1: ("w", 1000)})
    engine.register_sandbox(sb, capture_initial=True)
    jobs = [engine.submit("s", t, PROC, t + 1) for t in range(3)]
    loop.run()
    assert all(j.lifecycle is Lifecycle.DONE for j in jobs)
    # fs artifact of every version pairs from the initial capture
    assert all(m.fs_turn == -1 for m in engine.list_versions("s")[1:])
