"""Loaders for the traces shipped with the package.

`heterogeneous` mixes per-task statefulness around the measured production
profile (skip ratio above 70%); `stress` raises the stateful share to
pressure the scheduler once LLM wait windows are scaled down.
"""

from __future__ import annotations

from importlib.resources import files

from .trace import Trace, load_trace

BUNDLED = ("heterogeneous", "stress")


def bundled_trace(name: str, validate: bool = False) -> Trace:
    if name not in BUNDLED:
        raise ValueError(f"unknown bundled trace {name!r}; have {BUNDLED}")
    text = files("sandboxcr.harness").joinpath(f"data/{name}.jsonl").read_text()
    return load_trace(text.splitlines(), validate=validate)
