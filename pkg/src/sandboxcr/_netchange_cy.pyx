# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled net-change fold kernel. Semantics identical to `_netchange_py`."""

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


def fold_interval(ops, pre_paths, pre_pids, excluded_pids):
    cdef dict exists = {}
    cdef set rewritten = set()
    cdef dict alive = {}
    cdef set dirtied = set()
    cdef set spawned_in = set()
    cdef set implied_pre = set()
    cdef int kind
    cdef bint existed, exists_now, alive_b, alive_e

    for op in ops:
        kind = <int> op[0]
        if kind == 3:  # OP_FS_WRITE
            p = op[1]
            exists[p] = True
            rewritten.add(p)
        elif kind == 1:  # OP_FS_CREATE
            p = op[1]
            exists[p] = True
            if p in pre_paths:
                rewritten.add(p)
        elif kind == 2:  # OP_FS_DELETE
            exists[op[1]] = False
        elif kind == 4:  # OP_FS_RENAME
            exists[op[1]] = False
            new = op[2]
            exists[new] = True
            rewritten.add(new)
        elif kind == 5:  # OP_PROC_SPAWN
            pid = op[1]
            if pid in excluded_pids:
                continue
            alive[pid] = True
            spawned_in.add(pid)
        elif kind == 6:  # OP_PROC_EXIT
            pid = op[1]
            if pid in excluded_pids:
                continue
            if pid not in alive and pid not in pre_pids:
                implied_pre.add(pid)
            alive[pid] = False
        elif kind == 7:  # OP_PROC_DIRTY
            pid = op[1]
            if pid in excluded_pids:
                continue
            if pid not in alive and pid not in pre_pids:
                implied_pre.add(pid)
            dirtied.add(pid)
        else:
            raise ValueError(f"unknown op code {kind!r}")

    cdef dict changed_paths = {}
    for p, exists_now_obj in exists.items():
        exists_now = <bint> exists_now_obj
        existed = p in pre_paths
        if not existed and exists_now:
            changed_paths[p] = 1  # PATH_CREATED
        elif existed and not exists_now:
            changed_paths[p] = 2  # PATH_DELETED
        elif existed and exists_now and p in rewritten:
            changed_paths[p] = 3  # PATH_MODIFIED

    cdef dict proc_delta = {}
    touched = list(alive)
    for pid in dirtied:
        if pid not in alive:
            touched.append(pid)
    for pid in touched:
        alive_b = pid in pre_pids or pid in implied_pre
        alive_e = <bint> alive[pid] if pid in alive else alive_b
        if not alive_b and alive_e:
            proc_delta[pid] = 1  # PROC_SPAWNED
        elif alive_b and not alive_e:
            proc_delta[pid] = 2  # PROC_EXITED
        elif alive_b and alive_e:
            if pid in spawned_in:
                proc_delta[pid] = 1
            elif pid in dirtied:
                proc_delta[pid] = 3  # PROC_DIRTIED

    return changed_paths, proc_delta
