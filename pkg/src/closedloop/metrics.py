"""Run metrics computed purely from a completed trace."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass
from typing import Iterable

from .trace import ExecutionTrace
from .world import Fact, Goal, SymbolicState, satisfies

PLANNER_ORIGINS = ("plan", "correction")


class EmptySample(ValueError):
    pass


def _require_complete(trace: ExecutionTrace) -> None:
    trace.end  # raises IncompleteTrace


def exec_rate(trace: ExecutionTrace) -> float:
    """Share of attempted semantic actions whose last perception succeeded.

    Correction actions count as attempts; a failed action that later passes on
    retry counts as a success.  No attempts at all gives 1.0.
    """
    _require_complete(trace)
    attempted: list[str] = []
    last: dict[str, bool] = {}
    for e in trace:
        if e.kind == "action_start":
            if e.payload["id"] not in last:
                attempted.append(e.payload["id"])
                last[e.payload["id"]] = False
        elif e.kind == "perception":
            last[e.payload["id"]] = bool(e.payload["flag"])
    if not attempted:
        return 1.0
    return sum(last[i] for i in attempted) / len(attempted)


def _goal_from(payload: dict) -> Goal:
    g = payload.get("goal", {})
    return Goal(frozenset(map(Fact.parse, g.get("required", ()))),
                frozenset(map(Fact.parse, g.get("forbidden", ()))))


def success(trace: ExecutionTrace, goal: Goal | None = None) -> int:
    end = trace.end
    state = SymbolicState(frozenset(map(Fact.parse, end.payload["final_state"])))
    return int(satisfies(state, goal if goal is not None else _goal_from(end.payload)))


def count_motions(trace: ExecutionTrace) -> int:
    """Primitives handed out by the planner: the plan plus every correction."""
    total = 0
    for e in trace:
        if e.kind == "plan":
            total += e.payload["primitives"]
        elif e.kind == "correction_generate" and e.payload.get("primitives"):
            total += e.payload["primitives"]
    return total


def count_cues(trace: ExecutionTrace) -> int:
    return trace.count("correction_generate")


@dataclass(frozen=True)
class RunMetrics:
    sr: int
    exec: float
    motions: int
    cues: int

    def __post_init__(self) -> None:
        if self.sr not in (0, 1):
            raise ValueError("sr is 0 or 1 for a single run")
        if not 0.0 <= self.exec <= 1.0:
            raise ValueError("exec must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(trace: ExecutionTrace, goal: Goal | None = None) -> RunMetrics:
    return RunMetrics(success(trace, goal), exec_rate(trace), count_motions(trace), count_cues(trace))


def aggregate(values: Iterable[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    values = [float(v) for v in values]
    if not values:
        raise EmptySample("cannot aggregate an empty sample")
    return statistics.fmean(values), statistics.pstdev(values)
