"""Closed-loop task execution with hierarchical, stack-based self-correction."""

from .engine import (
    CorrectionFrame, CorrectionStack, Engine, ExecutorConfig, StackEmpty, StackExhausted,
    StepOutcome, run_task,
)
from .loader import ConfigError, load_domain, load_scenario, validate_domain
from .metrics import RunMetrics, aggregate, compute_metrics, count_cues, count_motions, exec_rate, success
from .trace import ExecutionTrace, TraceEvent

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CorrectionFrame", "CorrectionStack", "Engine", "ExecutionTrace", "ExecutorConfig",
    "RunMetrics", "StackEmpty", "StackExhausted", "StepOutcome", "TraceEvent", "aggregate",
    "compute_metrics", "count_cues", "count_motions", "exec_rate", "load_domain", "load_scenario",
    "run_task", "success", "validate_domain",
]
