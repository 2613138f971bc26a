"""Fold-vs-oracle equivalence on randomized well-formed event sequences.

The oracle materializes states and diffs them; the fold sees only the
interval. They must agree on the full report, not just the classification.
"""

import random

import pytest
from hypothesis import given, settings, strategies as st

from sandboxcr.events import (
    FsCreate,
    FsDelete,
    FsRename,
    FsWrite,
    ProcDirty,
    ProcExit,
    ProcSpawn,
)
from sandboxcr.netchange import (
    OP_FS_CREATE,
    OP_FS_DELETE,
    OP_FS_RENAME,
    OP_FS_WRITE,
    OP_PROC_DIRTY,
    OP_PROC_EXIT,
    OP_PROC_SPAWN,
    fold_interval,
)
from sandboxcr.statediff import MaterializedState, diff_states

PATHS = [f"/p{i}" for i in range(8)]
PIDS = list(range(1, 5))


def random_case(rng: random.Random, max_events: int = 20):
    """A random initial state plus a well-formed event sequence over it."""
    init_paths = {p for p in PATHS if rng.random() < 0.5}
    init_pids = {p for p in PIDS if rng.random() < 0.5}
    state = MaterializedState.from_sets(init_paths, init_pids)
    payloads = []
    for _ in range(rng.randint(0, max_events)):
        live_paths = sorted(state.paths)
        dead_paths = sorted(set(PATHS) - state.paths.keys())
        live_pids = sorted(state.procs)
        dead_pids = sorted(set(PIDS) - state.procs.keys())
        options = []
        if dead_paths:
            options.append("create")
        if live_paths:
            options.extend(["write", "delete"])
        if live_paths and dead_paths:
            options.append("rename")
        if dead_pids:
            options.append("spawn")
        if live_pids:
            options.extend(["exit", "dirty"])
        if not options:
            break
        op = rng.choice(options)
        if op == "create":
            payloads.append(FsCreate(rng.choice(dead_paths)))
        elif op == "write":
            payloads.append(FsWrite(rng.choice(live_paths)))
        elif op == "delete":
            payloads.append(FsDelete(rng.choice(live_paths)))
        elif op == "rename":
            payloads.append(FsRename(rng.choice(live_paths), rng.choice(dead_paths)))
        elif op == "spawn":
            payloads.append(ProcSpawn(rng.choice(dead_pids)))
        elif op == "exit":
            payloads.append(ProcExit(rng.choice(live_pids)))
        else:
            payloads.append(ProcDirty(rng.choice(live_pids)))
        state.apply(payloads[-1])
    return init_paths, init_pids, payloads


_OPS = {
    FsCreate: lambda p: (OP_FS_CREATE, p.path),
    FsDelete: lambda p: (OP_FS_DELETE, p.path),
    FsWrite: lambda p: (OP_FS_WRITE, p.path),
    FsRename: lambda p: (OP_FS_RENAME, p.old_path, p.new_path),
    ProcSpawn: lambda p: (OP_PROC_SPAWN, p.pid),
    ProcExit: lambda p: (OP_PROC_EXIT, p.pid),
    ProcDirty: lambda p: (OP_PROC_DIRTY, p.pid),
}


def check_case(init_paths, init_pids, payloads):
    before = MaterializedState.from_sets(init_paths, init_pids)
    after = before.copy().apply_all(payloads)
    oracle_paths, oracle_procs = diff_states(before, after)
    ops = [_OPS[type(p)](p) for p in payloads]
    fold_paths, fold_procs = fold_interval(ops, frozenset(init_paths), frozenset(init_pids), frozenset())
    assert dict(sorted(fold_paths.items())) == oracle_paths
    assert dict(sorted(fold_procs.items())) == oracle_procs


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=300, deadline=None)
def test_fold_matches_oracle(seed):
    check_case(*random_case(random.Random(seed)))


def test_fold_matches_oracle_bulk_seeded():
    rng = random.Random(0xC0FFEE)
    for _ in range(2000):
        check_case(*random_case(rng))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_zero_false_negatives(seed):
    """If the oracle sees any change in a dimension, the fold flags it."""
    rng = random.Random(seed)
    for _ in range(500):
        init_paths, init_pids, payloads = random_case(rng)
        before = MaterializedState.from_sets(init_paths, init_pids)
        after = before.copy().apply_all(payloads)
        oracle_paths, oracle_procs = diff_states(before, after)
        ops = [_OPS[type(p)](p) for p in payloads]
        fold_paths, fold_procs = fold_interval(
            ops, frozenset(init_paths), frozenset(init_pids), frozenset()
        )
        if oracle_paths:
            assert fold_paths
        if oracle_procs:
            assert fold_procs
