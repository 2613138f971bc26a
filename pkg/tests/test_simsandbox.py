"""Sandbox stand-in: action/event fidelity, crash semantics, determinism."""

import pytest

from sandboxcr.errors import PathConflict, SandboxCrashed
from sandboxcr.events import FsCreate, FsDelete, FsRename, FsWrite, ProcDirty, ProcExit, ProcSpawn
from sandboxcr.inspector import Inspector
from sandboxcr.netchange import classify, CheckpointClass
from sandboxcr.simsandbox import (
    CreateFile,
    DeleteFile,
    KillProc,
    ReadFile,
    RenameFile,
    SimSandbox,
    Sleep,
    SpawnProc,
    TouchMemory,
    WriteFile,
)
from sandboxcr.statediff import MaterializedState, diff_states


def collecting_sandbox(**kwargs):
    events = []
    sb = SimSandbox("s", root=None, emit=events.append, **kwargs)
    return sb, events


class TestEventEmission:
    def test_one_event_per_mutation_with_increasing_seq(self):
        sb, events = collecting_sandbox()
        n = sb.apply([CreateFile("/a", b"1"), WriteFile("/a", b"2")])
        assert n == 2
        assert [e.seq for e in events] == [1, 2]
        assert [type(e.payload) for e in events] == [FsCreate, FsWrite]

    def test_reads_and_sleeps_emit_nothing(self):
        sb, events = collecting_sandbox()
        sb.apply([CreateFile("/a", b"1")])
        events.clear()
        sb.apply([ReadFile("/a"), Sleep(0.5)])
        assert events == []

    def test_spawn_kill_round_trip(self):
        sb, events = collecting_sandbox()
        sb.apply([SpawnProc(5, footprint=10), KillProc(5)])
        assert [type(e.payload) for e in events] == [ProcSpawn, ProcExit]
        assert sb.registry == {}

    def test_touch_memory_emits_dirty_and_sets_flag(self):
        sb, events = collecting_sandbox(initial_procs={1: ("w", 10)})
        sb.apply([TouchMemory(1)])
        assert isinstance(events[0].payload, ProcDirty)
        assert sb.registry[1][2] is True

    def test_rename_emits_single_event(self):
        sb, events = collecting_sandbox()
        sb.apply([CreateFile("/a", b"x"), RenameFile("/a", "/b")])
        assert isinstance(events[-1].payload, FsRename)
        assert sb.list_paths() == ["/b"]

    def test_parent_dirs_emit_create_events(self):
        sb, events = collecting_sandbox()
        sb.apply([CreateFile("/x/y/z.txt", b"deep")])
        kinds = [(type(e.payload), getattr(e.payload, "path", None)) for e in events]
        assert kinds == [(FsCreate, "/x"), (FsCreate, "/x/y"), (FsCreate, "/x/y/z.txt")]


class TestConflicts:
    def test_create_over_existing(self):
        sb, _ = collecting_sandbox()
        sb.apply([CreateFile("/a", b"")])
        with pytest.raises(PathConflict):
            sb.apply([CreateFile("/a", b"")])

    def test_write_missing(self):
        sb, _ = collecting_sandbox()
        with pytest.raises(PathConflict):
            sb.apply([WriteFile("/none", b"")])

    def test_delete_nonempty_dir(self):
        sb, _ = collecting_sandbox()
        sb.apply([CreateFile("/d/f", b"")])
        with pytest.raises(PathConflict):
            sb.apply([DeleteFile("/d")])
        sb.apply([DeleteFile("/d/f"), DeleteFile("/d")])
        assert sb.list_paths() == []

    def test_spawn_live_pid(self):
        sb, _ = collecting_sandbox(initial_procs={1: ("w", 10)})
        with pytest.raises(PathConflict):
            sb.apply([SpawnProc(1)])


class TestCrash:
    def test_crash_blocks_actions(self):
        sb, _ = collecting_sandbox()
        sb.crash()
        with pytest.raises(SandboxCrashed):
            sb.apply([CreateFile("/a", b"")])

    def test_crash_loses_registry_keeps_bytes(self):
        sb, _ = collecting_sandbox(initial_procs={1: ("w", 10)})
        sb.apply([CreateFile("/a", b"survives")])
        sb.crash()
        assert sb.registry == {}
        assert sb._files == {"/a": b"survives"}  # disk outlives the kill

    def test_restore_marks_alive(self):
        sb, _ = collecting_sandbox()
        sb.crash()
        sb.apply_tree([("/r", "f", 0o644, b"restored")])
        sb.replace_registry({2: ("d", 5, False)})
        sb.mark_restored()
        sb.apply([WriteFile("/r", b"more")])


def test_determinism_same_actions_same_hash_and_events(tmp_path):
    script = [
        CreateFile("/a", b"1"),
        CreateFile("/d/b", b"2"),
        WriteFile("/a", b"3"),
        SpawnProc(9, footprint=7),
        RenameFile("/a", "/c"),
        TouchMemory(9),
    ]
    runs = []
    for i in range(2):
        events = []
        sb = SimSandbox("s", root=None, emit=events.append)
        sb.apply(script)
        runs.append((sb.tree_hash(), [(e.seq, e.payload) for e in events], dict(sb.registry)))
    assert runs[0] == runs[1]


def test_real_mode_equivalent_to_memory_mode(tmp_path):
    script = [
        CreateFile("/a", b"1"),
        CreateFile("/d/b", b"2"),
        WriteFile("/a", b"3"),
        DeleteFile("/d/b"),
        RenameFile("/a", "/z"),
    ]
    mem_events, real_events = [], []
    mem = SimSandbox("m", root=None, emit=mem_events.append)
    real = SimSandbox("r", root=tmp_path / "ws", emit=real_events.append)
    mem.apply(script)
    real.apply(script)
    assert mem.tree_hash() == real.tree_hash()
    assert [e.payload for e in mem_events] == [e.payload for e in real_events]


def test_event_fidelity_inspector_matches_oracle_diff():
    """Replaying the emitted event log through the state-diff oracle
    reproduces exactly what the inspector reports (closes the loop)."""
    inspector = Inspector()
    events = []

    def emit(e):
        events.append(e)
        inspector.ingest_event(e)

    sb = SimSandbox("s", root=None, emit=emit, initial_procs={1: ("w", 10)})
    inspector.register_sandbox("s", preexisting_pids=[1])
    before = MaterializedState.from_sets([], [1])
    sb.apply(
        [
            CreateFile("/tmp1", b"t"),
            WriteFile("/tmp1", b"t2"),
            DeleteFile("/tmp1"),  # transient
            CreateFile("/keep", b"k"),
            SpawnProc(5, footprint=1),
            KillProc(5),  # transient
            TouchMemory(1),
        ]
    )
    after = before.copy().apply_all([e.payload for e in events])
    oracle_paths, oracle_procs = diff_states(before, after)
    report = inspector.compute_net_change("s")
    assert {p: c.value for p, c in report.changed_paths.items()} == oracle_paths
    assert {p: c.value for p, c in report.proc_delta.items()} == oracle_procs
    assert classify(report) is CheckpointClass.FULL


def test_agent_spawn_excluded_from_classification():
    inspector = Inspector()
    sb = SimSandbox("s", root=None, emit=inspector.ingest_event, initial_procs={1: ("w", 10)})
    inspector.register_sandbox("s", preexisting_pids=[1])
    sb.spawn_agent(100)
    sb.apply([TouchMemory(100)])
    assert classify(inspector.compute_net_change("s")) is CheckpointClass.SKIP
