"""Command-line front end.

A JSON config file (``--config``) may supply any option under the same key
as its flag (dashes become underscores); explicit flags win. Exit status is
nonzero whenever a correctness flag fails.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from .backends.portable import DirWorkspace, PortableBackend
from .backends.simulated import LatencyModel
from .engine.store import ManifestStore
from .errors import ConfigInvalid, SandboxCrError
from .harness.bundled import BUNDLED, bundled_trace
from .harness.faults import gen_fault_plan
from .harness.metrics import percentile
from .harness.replay import ReplayConfig, run_replay, verify_recovery
from .harness.suite import make_recovery_suite
from .harness.trace import TraceGenSpec, gen_trace, load_trace, save_trace
from .netchange import KERNEL_IMPL


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"bad config file: {exc}") from exc
    if not isinstance(cfg, dict):
        raise click.ClickException("config file must hold a JSON object")
    return cfg


def _pick(explicit, cfg: dict, key: str, default):
    if explicit is not None:
        return explicit
    return cfg.get(key, default)


def _resolve_trace(ref: str):
    if ref.startswith("bundled:"):
        name = ref.split(":", 1)[1]
        if name not in BUNDLED:
            raise click.ClickException(f"unknown bundled trace {name!r}; have {BUNDLED}")
        return bundled_trace(name)
    return load_trace(ref)


@click.group()
def main() -> None:
    """Checkpoint/restore runtime for agent sandboxes: trace replay,
    scheduling experiments, and recovery verification."""


@main.command("gen-trace")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--tasks", type=int, default=None)
@click.option("--turns", type=int, default=None)
@click.option("--stateless-fraction", type=float, default=None)
@click.option("--fs-fraction", type=float, default=None)
@click.option("--proc-fraction", type=float, default=None)
@click.option("--wait-median-ms", type=float, default=None)
@click.option("--wait-sigma", type=float, default=None)
@click.option("--mode", type=click.Choice(["in_sandbox", "with_sandbox", "mixed"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
def gen_trace_cmd(config_path, tasks, turns, stateless_fraction, fs_fraction, proc_fraction,
                  wait_median_ms, wait_sigma, mode, seed, out) -> None:
    """Generate a synthetic trace with ground-truth class annotations."""
    cfg = _load_config(config_path)
    spec = TraceGenSpec(
        tasks=_pick(tasks, cfg, "tasks", 16),
        turns=_pick(turns, cfg, "turns", 30),
        stateless_fraction=_pick(stateless_fraction, cfg, "stateless_fraction", 0.75),
        fs_fraction=_pick(fs_fraction, cfg, "fs_fraction", 0.15),
        proc_fraction=_pick(proc_fraction, cfg, "proc_fraction", 0.05),
        wait_median_ms=_pick(wait_median_ms, cfg, "wait_median_ms", 3340.0),
        wait_sigma=_pick(wait_sigma, cfg, "wait_sigma", 0.8),
        seed=_pick(seed, cfg, "seed", 0),
        mode=_pick(mode, cfg, "mode", "in_sandbox"),
    )
    try:
        trace = gen_trace(spec)
    except SandboxCrError as exc:
        raise click.ClickException(str(exc)) from exc
    save_trace(trace, out)
    click.echo(f"wrote {sum(len(t.turns) for t in trace.tasks)} turns "
               f"across {len(trace.tasks)} tasks to {out}")


def _replay_config(cfg: dict, backend, density, policy, wait_scale, seed, workers, clock,
                   store, out_dir) -> ReplayConfig:
    return ReplayConfig(
        backend=_pick(backend, cfg, "backend", "simulated"),
        clock_mode=_pick(clock, cfg, "clock", "virtual"),
        density=_pick(density, cfg, "density", 16),
        policy=_pick(policy, cfg, "policy", "reactive"),
        wait_scale=_pick(wait_scale, cfg, "wait_scale", 1.0),
        seed=_pick(seed, cfg, "seed", 0),
        workers=_pick(workers, cfg, "workers", 8),
        latency=LatencyModel(),
        store_dir=Path(store) if store else None,
    )


@main.command()
@click.argument("trace_ref")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--backend", type=click.Choice(["simulated", "portable"]), default=None)
@click.option("--density", type=int, default=None)
@click.option("--policy", type=click.Choice(["reactive", "fifo"]), default=None)
@click.option("--wait-scale", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--clock", type=click.Choice(["virtual", "real"]), default=None)
@click.option("--crash-fraction", type=float, default=None, help="fraction of tasks crashed once")
@click.option("--fault-seed", type=int, default=None)
@click.option("--store", type=click.Path(), default=None, help="persist the manifest store here")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="write CSV reports here")
def replay(trace_ref, config_path, backend, density, policy, wait_scale, seed, workers, clock,
           crash_fraction, fault_seed, store, out_dir) -> None:
    """Replay TRACE_REF (a path, or bundled:heterogeneous / bundled:stress)."""
    cfg = _load_config(config_path)
    config = _replay_config(cfg, backend, density, policy, wait_scale, seed, workers, clock,
                            store, out_dir)
    trace = _resolve_trace(trace_ref)
    crash_fraction = _pick(crash_fraction, cfg, "crash_fraction", 0.0)
    try:
        if crash_fraction > 0:
            plan = gen_fault_plan(trace, _pick(fault_seed, cfg, "fault_seed", config.seed + 1),
                                  crash_fraction=crash_fraction)
            if config.backend != "portable":
                config = replace(config, backend="portable")
                click.echo("note: crash verification uses the portable backend", err=True)
            metrics, _ = verify_recovery(trace, plan, config)
        else:
            metrics = run_replay(trace, None, config)
    except SandboxCrError as exc:
        raise click.ClickException(str(exc)) from exc
    for line in metrics.result_lines():
        click.echo(line)
    if out_dir:
        for path in metrics.write_csv(Path(out_dir)):
            click.echo(f"wrote {path}")
    if not metrics.recovery_ok():
        bad = [t.task_id for t in metrics.tasks if t.recovered_ok is False]
        click.echo(f"RECOVERY FAILED for {len(bad)} task(s): {', '.join(bad)}", err=True)
        sys.exit(1)


@main.command("bench-scheduler")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--trace", "trace_ref", default="bundled:stress")
@click.option("--density", type=int, default=None)
@click.option("--wait-scales", default="0.2,0.4,0.6", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def bench_scheduler(config_path, trace_ref, density, wait_scales, seed, workers, out_dir) -> None:
    """Reactive vs FIFO exposed-delay comparison under shrinking wait windows.

    Defaults match the bundled stress setup: density 96, 4 workers, seed 6."""
    cfg = _load_config(config_path)
    trace = _resolve_trace(trace_ref)
    scales = [float(s) for s in wait_scales.split(",") if s]
    rows = []
    for scale in scales:
        per_policy = {}
        for policy in ("reactive", "fifo"):
            config = ReplayConfig(
                backend="simulated",
                density=_pick(density, cfg, "density", 96),
                policy=policy,
                wait_scale=scale,
                seed=_pick(seed, cfg, "seed", 6),
                workers=_pick(workers, cfg, "workers", 4),
                stagger_s=2.0,
            )
            metrics = run_replay(trace, None, config)
            delays = metrics.exposed_delays()
            per_policy[policy] = {
                "p50": percentile(delays, 50),
                "p95": percentile(delays, 95),
            }
        rows.append((scale, per_policy))
        r, f = per_policy["reactive"], per_policy["fifo"]
        gain = (1 - r["p50"] / f["p50"]) * 100 if f["p50"] > 0 else 0.0
        click.echo(
            f"wait_scale={scale}: reactive p50={r['p50']:.3f}s p95={r['p95']:.3f}s | "
            f"fifo p50={f['p50']:.3f}s p95={f['p95']:.3f}s | median gain {gain:.1f}%"
        )
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "scheduler_comparison.csv"
        with open(path, "w") as fp:
            fp.write("wait_scale,policy,exposed_delay_p50_s,exposed_delay_p95_s\n")
            for scale, per_policy in rows:
                for policy, vals in per_policy.items():
                    fp.write(f"{scale},{policy},{vals['p50']:.6f},{vals['p95']:.6f}\n")
        click.echo(f"wrote {path}")


@main.command("verify-recovery")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--tasks", type=int, default=None, help="tasks per category (ff/reissue/plain)")
@click.option("--turns", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def verify_recovery_cmd(config_path, tasks, turns, seed, out_dir) -> None:
    """Crash every task once and verify restored state equals a no-fault run."""
    cfg = _load_config(config_path)
    n = _pick(tasks, cfg, "tasks", 17)
    trace, plan = make_recovery_suite(
        n_fast_forward=n,
        n_reissue=n,
        n_plain=max(1, 50 - 2 * n) if n == 17 else n,
        turns=_pick(turns, cfg, "turns", 12),
        seed=_pick(seed, cfg, "seed", 1234),
    )
    config = ReplayConfig(backend="portable", seed=plan.seed)
    metrics, _ = verify_recovery(trace, plan, config)
    ok = 0
    for t in metrics.tasks:
        status = "ok" if t.recovered_ok else "FAIL"
        ok += bool(t.recovered_ok)
        click.echo(f"{t.task_id}: crash@{t.crash_turn} restores={t.restores} {status}")
    click.echo(f"{ok}/{len(metrics.tasks)} tasks recovered to no-fault state")
    if out_dir:
        metrics.write_csv(Path(out_dir))
    if ok != len(metrics.tasks):
        sys.exit(1)


@main.command()
@click.argument("sandbox")
@click.option("--store", type=click.Path(exists=True), required=True)
def versions(sandbox, store) -> None:
    """List published recovery points for SANDBOX."""
    manifest_store = ManifestStore(Path(store))
    try:
        rows = manifest_store.list_versions(sandbox)
    except SandboxCrError as exc:
        raise click.ClickException(str(exc)) from exc
    if not rows:
        click.echo("(no versions)")
        return
    for m in rows:
        click.echo(
            f"v{m.version_id}: proc=turn{m.proc_turn} ({m.proc_artifact.artifact_id}) "
            f"fs=turn{m.fs_turn} ({m.fs_artifact.artifact_id}) covers=turn{m.covers_turn} "
            f"parent={'-' if m.parent_version is None else m.parent_version}"
        )


@main.command()
@click.argument("sandbox")
@click.argument("version", type=int)
@click.option("--store", type=click.Path(exists=True), required=True)
@click.option("--dest", type=click.Path(), required=True, help="directory to materialize into")
def restore(sandbox, version, store, dest) -> None:
    """Materialize SANDBOX at VERSION into --dest (registry lands beside it)."""
    store_path = Path(store)
    manifest_store = ManifestStore(store_path)
    backend = PortableBackend(store_path / "blobs-root")
    try:
        manifest = manifest_store.get(sandbox, version)
        target = DirWorkspace(f"{sandbox}-restored", Path(dest))
        backend.restore_fs(manifest.fs_artifact.backend_handle, target)
        backend.restore_proc(manifest.proc_artifact.backend_handle, target)
    except SandboxCrError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(
        f"restored {sandbox} v{version} (proc turn {manifest.proc_turn}, "
        f"fs turn {manifest.fs_turn}) into {dest}"
    )


@main.command()
def info() -> None:
    """Print runtime build info (which fold kernel is active)."""
    click.echo(f"net-change kernel: {KERNEL_IMPL}")


if __name__ == "__main__":
    main()
