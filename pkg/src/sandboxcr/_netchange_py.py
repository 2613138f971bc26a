"""Pure-Python net-change fold kernel.

This is the per-event hot path of the whole runtime: every OS effect a
sandbox emits is folded through here at each inspection point. A compiled
variant with identical semantics lives in `_netchange_cy.pyx`; callers pick
one via `sandboxcr.netchange`.

The kernel works on compact op tuples rather than event dataclasses so both
implementations share one boundary:

    (OP_FS_CREATE, path)            (OP_PROC_SPAWN, pid)
    (OP_FS_DELETE, path)            (OP_PROC_EXIT, pid)
    (OP_FS_WRITE, path)             (OP_PROC_DIRTY, pid)
    (OP_FS_RENAME, old, new)

and returns ({path: change_code}, {pid: change_code}).
"""

from __future__ import annotations

from typing import Collection, Sequence

OP_FS_CREATE = 1
OP_FS_DELETE = 2
OP_FS_WRITE = 3
OP_FS_RENAME = 4
OP_PROC_SPAWN = 5
OP_PROC_EXIT = 6
OP_PROC_DIRTY = 7

PATH_CREATED = 1
PATH_DELETED = 2
PATH_MODIFIED = 3

PROC_SPAWNED = 1
PROC_EXITED = 2
PROC_DIRTIED = 3


def fold_interval(
    ops: Sequence[tuple],
    pre_paths: Collection[str],
    pre_pids: Collection[int],
    excluded_pids: Collection[int],
) -> tuple[dict[str, int], dict[int, int]]:
    """Fold one interval of ops into net path and pid changes.

    `pre_paths` / `pre_pids` are the existence sets at the baseline. Effects
    that cancel out within the interval (transient files, short-lived
    processes) produce no entry. A pid seen first in an exit/dirty op without
    prior knowledge is treated as preexisting, which can only add changes.
    """
    exists: dict[str, bool] = {}
    rewritten: set[str] = set()
    alive: dict[int, bool] = {}
    dirtied: set[int] = set()
    spawned_in: set[int] = set()
    implied_pre: set[int] = set()

    for op in ops:
        kind = op[0]
        if kind == OP_FS_WRITE:
            p = op[1]
            exists[p] = True
            rewritten.add(p)
        elif kind == OP_FS_CREATE:
            p = op[1]
            exists[p] = True
            if p in pre_paths:
                # deleted earlier in the interval, now recreated: new content
                rewritten.add(p)
        elif kind == OP_FS_DELETE:
            exists[op[1]] = False
        elif kind == OP_FS_RENAME:
            old = op[1]
            new = op[2]
            exists[old] = False
            exists[new] = True
            rewritten.add(new)
        elif kind == OP_PROC_SPAWN:
            pid = op[1]
            if pid in excluded_pids:
                continue
            alive[pid] = True
            spawned_in.add(pid)
        elif kind == OP_PROC_EXIT:
            pid = op[1]
            if pid in excluded_pids:
                continue
            if pid not in alive and pid not in pre_pids:
                implied_pre.add(pid)
            alive[pid] = False
        elif kind == OP_PROC_DIRTY:
            pid = op[1]
            if pid in excluded_pids:
                continue
            if pid not in alive and pid not in pre_pids:
                implied_pre.add(pid)
            dirtied.add(pid)
        else:
            raise ValueError(f"unknown op code {kind!r}")

    changed_paths: dict[str, int] = {}
    for p, exists_now in exists.items():
        existed = p in pre_paths
        if not existed and exists_now:
            changed_paths[p] = PATH_CREATED
        elif existed and not exists_now:
            changed_paths[p] = PATH_DELETED
        elif existed and exists_now and p in rewritten:
            changed_paths[p] = PATH_MODIFIED

    proc_delta: dict[int, int] = {}
    touched = list(alive)
    for pid in dirtied:
        if pid not in alive:
            touched.append(pid)
    for pid in touched:
        alive_b = pid in pre_pids or pid in implied_pre
        alive_e = alive.get(pid, alive_b)
        if not alive_b and alive_e:
            proc_delta[pid] = PROC_SPAWNED
        elif alive_b and not alive_e:
            proc_delta[pid] = PROC_EXITED
        elif alive_b and alive_e:
            if pid in spawned_in:
                # pid reuse within the interval: a different process now
                proc_delta[pid] = PROC_SPAWNED
            elif pid in dirtied:
                proc_delta[pid] = PROC_DIRTIED

    return changed_paths, proc_delta
