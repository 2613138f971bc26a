from .faults import FaultPlan, Preemption, gen_fault_plan
from .metrics import RunMetrics, TaskMetrics, percentile
from .replay import ReplayConfig, run_replay, verify_recovery
from .trace import Trace, TraceGenSpec, TraceTurn, TaskTrace, gen_trace, load_trace, save_trace

__all__ = [
    "FaultPlan",
    "Preemption",
    "ReplayConfig",
    "RunMetrics",
    "TaskMetrics",
    "Trace",
    "TraceGenSpec",
    "TraceTurn",
    "TaskTrace",
    "gen_fault_plan",
    "gen_trace",
    "load_trace",
    "percentile",
    "run_replay",
    "save_trace",
    "verify_recovery",
]
