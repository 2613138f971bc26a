#!/usr/bin/env python3
"""Benchmark the net-change fold: compiled kernel vs pure Python.

Generates realistic interval logs (mixed fs/proc ops over a few hundred
paths) and times both implementations over the same inputs.

    python benchmarks/bench_netchange.py [--events N] [--intervals N]
"""

from __future__ import annotations

import argparse
import random
import statistics
import time

from sandboxcr import _netchange_py
from sandboxcr.netchange import (
    OP_FS_CREATE,
    OP_FS_DELETE,
    OP_FS_RENAME,
    OP_FS_WRITE,
    OP_PROC_DIRTY,
    OP_PROC_EXIT,
    OP_PROC_SPAWN,
)

try:
    from sandboxcr import _netchange_cy
except ImportError:
    _netchange_cy = None


def make_interval(rng: random.Random, n_events: int):
    paths = [f"/work/dir{i % 17}/file{i}" for i in range(256)]
    pids = list(range(1, 33))
    pre_paths = frozenset(rng.sample(paths, 128))
    pre_pids = frozenset(rng.sample(pids, 16))
    excluded = frozenset({1})
    ops = []
    for _ in range(n_events):
        r = rng.random()
        if r < 0.35:
            ops.append((OP_FS_WRITE, rng.choice(paths)))
        elif r < 0.55:
            ops.append((OP_FS_CREATE, rng.choice(paths)))
        elif r < 0.70:
            ops.append((OP_FS_DELETE, rng.choice(paths)))
        elif r < 0.75:
            ops.append((OP_FS_RENAME, rng.choice(paths), rng.choice(paths)))
        elif r < 0.85:
            ops.append((OP_PROC_DIRTY, rng.choice(pids)))
        elif r < 0.93:
            ops.append((OP_PROC_SPAWN, rng.choice(pids)))
        else:
            ops.append((OP_PROC_EXIT, rng.choice(pids)))
    return ops, pre_paths, pre_pids, excluded


def bench(fold, intervals, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for ops, pre_paths, pre_pids, excluded in intervals:
            fold(ops, pre_paths, pre_pids, excluded)
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--events", type=int, default=200, help="events per interval")
    parser.add_argument("--intervals", type=int, default=2000)
    args = parser.parse_args()

    rng = random.Random(42)
    intervals = [make_interval(rng, args.events) for _ in range(args.intervals)]
    total_events = args.events * args.intervals

    results = {}
    best_py, med_py = bench(_netchange_py.fold_interval, intervals)
    results["pure-python"] = (best_py, med_py)
    if _netchange_cy is not None:
        for ops, p, q, e in intervals[:50]:  # sanity: identical outputs
            assert _netchange_cy.fold_interval(ops, p, q, e) == _netchange_py.fold_interval(ops, p, q, e)
        best_cy, med_cy = bench(_netchange_cy.fold_interval, intervals)
        results["cython"] = (best_cy, med_cy)

    print(f"{args.intervals} intervals x {args.events} events = {total_events:,} events/pass\n")
    print(f"{'kernel':<14} {'best':>10} {'median':>10} {'events/s':>14}")
    for name, (best, med) in results.items():
        print(f"{name:<14} {best:>9.4f}s {med:>9.4f}s {total_events / best:>14,.0f}")
    if _netchange_cy is not None:
        print(f"\nspeedup (best): {results['pure-python'][0] / results['cython'][0]:.2f}x")
    else:
        print("\ncompiled kernel not built; run `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
