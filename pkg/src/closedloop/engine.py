"""Closed-loop executor with hierarchical, stack-based self-correction.

Per planned action the engine runs predefined error checks on every primitive
(low-level feedback, handled inline without the planner), executes it, then
compares the perceived state with the action's expected successor.  A failure
starts the correction loop: a bounded LIFO of (action, cause) frames, one
planner consult per iteration, and after every successful correction the
stacked actions are retried top-down so the original action runs last.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import IO

from .environments import ExecContext, PrimitiveResult, SymbolicWorld
from .planner import (
    Planner, PlannerError, PlannerTimeout, PlannerTransport, PlannerUnavailable, SchemaViolation,
    assemble_prompt,
)
from .trace import ExecutionTrace
from .world import (
    ChainBroken, CheckRule, Domain, DomainError, InvariantBreach, MovementPrimitive,
    SemanticAction, SymbolicState, Task, match_patterns, satisfies,
)

log = logging.getLogger(__name__)

EXHAUSTION_POLICIES = ("abort_task", "skip_step")


class StackEmpty(Exception):
    pass


class StackExhausted(Exception):
    pass


@dataclass
class CorrectionFrame:
    action: SemanticAction
    info: str
    level: str = "high"
    attempt_count: int = 1
    action_id: str = ""

    def __post_init__(self) -> None:
        if not self.info:
            raise ValueError("a correction frame needs an error cause")
        if self.attempt_count < 1:
            raise ValueError("attempt_count starts at 1")


class CorrectionStack:
    """Bounded first-in-last-out store of correction frames."""

    def __init__(self, threshold: int):
        if threshold < 1:
            raise ValueError("threshold must be >= 1")
        self.threshold = threshold
        self._frames: list[CorrectionFrame] = []

    def push(self, frame: CorrectionFrame) -> None:
        if len(self._frames) >= self.threshold:
            raise StackExhausted(f"stack already holds {self.threshold} frames")
        self._frames.append(frame)

    def pop(self) -> CorrectionFrame:
        if not self._frames:
            raise StackEmpty("pop from empty correction stack")
        return self._frames.pop()

    def top(self) -> CorrectionFrame:
        if not self._frames:
            raise StackEmpty("empty correction stack")
        return self._frames[-1]

    def update(self, frame: "CorrectionFrame | str") -> CorrectionFrame:
        """Refresh the top frame's cause; its action is kept."""
        top = self.top()
        info = frame.info if isinstance(frame, CorrectionFrame) else frame
        self._frames[-1] = replace(top, info=info, attempt_count=top.attempt_count + 1)
        return self._frames[-1]

    def depth(self) -> int:
        return len(self._frames)

    @property
    def frames(self) -> tuple[CorrectionFrame, ...]:
        return tuple(self._frames)


@dataclass(frozen=True)
class ExecutorConfig:
    threshold: int = 5
    correction_enabled: bool = True
    low_level_feedback_enabled: bool = True
    on_exhaustion: str = "abort_task"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.on_exhaustion not in EXHAUSTION_POLICIES:
            raise ValueError(f"on_exhaustion must be one of {EXHAUSTION_POLICIES}")

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "correction_enabled": self.correction_enabled,
            "low_level_feedback_enabled": self.low_level_feedback_enabled,
            "on_exhaustion": self.on_exhaustion,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class StepOutcome:
    status: str  # success | corrected | exhausted | skipped
    corrections_used: int = 0
    cues_used: int = 0
    restored: bool | None = None

    def __post_init__(self) -> None:
        if self.status == "corrected" and self.corrections_used < 1:
            raise ValueError("a corrected step used at least one correction")


@dataclass(frozen=True)
class ActionReport:
    flag: bool
    info: str
    observed: SymbolicState
    level: str | None = None


@dataclass
class Engine:
    task: Task
    world: SymbolicWorld
    planner: Planner
    config: ExecutorConfig = field(default_factory=ExecutorConfig)
    trace: ExecutionTrace = field(default_factory=ExecutionTrace)

    def __post_init__(self) -> None:
        self.domain: Domain = self.world.domain
        self.outcomes: list[StepOutcome] = []
        self._attempts: Counter = Counter()
        self._entry: SymbolicState | None = None
        self._original: SemanticAction | None = None

    # -- top level -----------------------------------------------------------
    def run(self) -> ExecutionTrace:
        try:
            plan = self.planner.plan(self.world.state, self.task)
        except (PlannerTimeout, PlannerTransport) as exc:
            self.trace.emit("plan_invalid", error=exc.event, message=str(exc))
            self._finish("planner_unavailable")
            raise PlannerUnavailable(str(exc), self.trace) from exc
        except (PlannerError, DomainError) as exc:
            self.trace.emit("plan_invalid", error=getattr(exc, "event", "domain"), message=str(exc))
            self._finish("plan_failed")
            return self.trace
        self.trace.emit(
            "plan",
            planner=self.planner.kind,
            actions=[str(a) for a in plan],
            primitives=sum(len(a.primitives) for a in plan),
        )
        status = "completed"
        for step, action in enumerate(plan, 1):
            outcome = self.run_step(step, action)
            self.outcomes.append(outcome)
            if outcome.status == "exhausted":
                status = "aborted"
                break
        self._finish(status)
        return self.trace

    def run_step(self, step: int, action: SemanticAction) -> StepOutcome:
        cfg = self.config
        self._attempts.clear()
        self._entry = self.world.state
        self._original = action
        aid = str(step)
        report = self.execute_action(action, step, aid, "plan")
        if report.flag:
            return StepOutcome("success")
        if not cfg.correction_enabled:
            self.trace.emit("step_skipped", step=step, id=aid, reason="correction disabled", info=report.info)
            return StepOutcome("skipped")
        outcome = self.correction_loop(action, report.info, step, level=report.level or "high", action_id=aid)
        if outcome.status == "exhausted" and cfg.on_exhaustion == "skip_step":
            self.trace.emit("step_skipped", step=step, id=aid, reason="exhausted", info=report.info)
            return replace(outcome, status="skipped")
        return outcome

    def _finish(self, status: str) -> None:
        state = self.world.state
        payload = {
            "status": status,
            "success": satisfies(state, self.task.goal),
            "final_state": state.literals(),
            "goal": {
                "required": sorted(map(str, self.task.goal.required)),
                "forbidden": sorted(map(str, self.task.goal.forbidden)),
            },
        }
        world_info = self._world_summary()
        if world_info:
            payload["world"] = world_info
        self.trace.emit("task_end", **payload)

    def _world_summary(self) -> dict:
        if hasattr(self.world, "visit_log"):
            return {"visit_log": list(self.world.visit_log), "agv_cell": list(self.world.agv_cell)}
        return {}

    # -- one semantic action -------------------------------------------------
    def _exec(self, prim: MovementPrimitive, step: int, aid: str, role: str, action: str,
              inline: bool) -> PrimitiveResult:
        key = (prim.name, prim.params)
        self._attempts[key] += 1
        ctx = ExecContext(step=step, action=action, role=role, attempt=self._attempts[key])
        result = self.world.execute_primitive(prim, ctx)
        self.trace.emit(
            "primitive_exec", step=step, id=aid, origin=role, inline=inline,
            primitive=str(prim), attempt=ctx.attempt, result=result.to_dict(),
        )
        return result

    def _match_check(self, prim: MovementPrimitive, violations) -> list[MovementPrimitive] | None:
        state = self.world.state
        for rule in prim.checks:
            if rule.missing not in violations:
                continue
            fix = self._ground_fix(rule, state)
            if fix is not None:
                return fix
        return None

    def _ground_fix(self, rule: CheckRule, state: SymbolicState) -> list[MovementPrimitive] | None:
        binding = match_patterns(state, rule.match)
        if binding is None:
            return None
        out = []
        for f in rule.fix:
            ground = f.substitute(binding)
            if ground.variables:
                return None
            out.append(self.domain.primitive(ground.name, ground.args))
        return out

    def _run_fix(self, prim, fixes, trigger, cause, predicted, step, aid, action):
        self.trace.emit(
            "predefined_fix", step=step, id=aid, primitive=str(prim), trigger=trigger,
            cause=cause, fix=[str(f) for f in fixes],
        )
        for fp in fixes:
            result = self._exec(fp, step, aid, "fix", action, inline=True)
            if not result.ok:
                return False, predicted
            predicted = self._advance(predicted, fp)
        return True, predicted

    def _advance(self, predicted: SymbolicState, prim: MovementPrimitive) -> SymbolicState:
        # nominal model of what was just issued; tolerant of earlier divergence
        try:
            return self.domain.apply_raw(predicted, prim.add_effects, prim.del_effects, str(prim))
        except InvariantBreach:
            return predicted

    def execute_action(self, action: SemanticAction, step: int, action_id: str, role: str) -> ActionReport:
        llf = self.config.low_level_feedback_enabled
        name = action.name
        self.trace.emit("action_start", step=step, id=action_id, role=role, action=str(action))
        predicted = self.world.state
        broken = None
        for prim in action.primitives:
            inline_used = False
            if llf:
                violations = self.domain.check_preconditions(self.world.state, prim)
                if violations:
                    fix = self._match_check(prim, violations)
                    if fix is not None:
                        inline_used = True
                        _, predicted = self._run_fix(
                            prim, fix, "precheck", f"{violations[0]} does not hold",
                            predicted, step, action_id, name,
                        )
            if broken is None:
                missing = self.domain.check_preconditions(predicted, prim)
                if missing:
                    broken = f"{action} cannot reach its expected result: {prim} needs {missing[0]}"
            result = self._exec(prim, step, action_id, role, name, inline=False)
            if not result.ok and llf and result.coverable and not inline_used:
                violations = self.domain.check_preconditions(self.world.state, prim)
                fix = self._match_check(prim, violations) if violations else []
                if fix is not None:
                    ok, predicted = self._run_fix(
                        prim, fix, "fault", result.message, predicted, step, action_id, name,
                    )
                    if ok:
                        result = self._exec(prim, step, action_id, role, name, inline=True)
            if not result.ok:
                return self._report(ActionReport(False, result.message, self.world.state, "low"),
                                    step, action_id)
            predicted = self._advance(predicted, prim)
        if broken is not None:
            return self._report(ActionReport(False, broken, self.world.state, "high"), step, action_id)
        seen = self.world.perceive(predicted)
        return self._report(ActionReport(seen.flag, seen.info, seen.observed, None if seen.flag else "high"),
                            step, action_id)

    def _report(self, report: ActionReport, step: int, aid: str) -> ActionReport:
        self.trace.emit("perception", step=step, id=aid, flag=report.flag, info=report.info, level=report.level)
        return report

    # -- correction ----------------------------------------------------------
    def correction_loop(self, failed_action: SemanticAction, info: str, step: int,
                        level: str = "high", action_id: str | None = None) -> StepOutcome:
        cfg = self.config
        aid = action_id or str(step)
        stack = CorrectionStack(cfg.threshold)
        stack.push(CorrectionFrame(failed_action, info, level, 1, aid))
        self.trace.emit("correction_push", step=step, depth=stack.depth(), id=aid,
                        action=str(failed_action), info=info, level=level)
        generated = 0
        for iteration in range(1, cfg.threshold + 1):
            psi = stack.top().info
            prompt = assemble_prompt(
                self.world.state, psi, [(f.action, f.info) for f in stack.frames], self.task.text,
            )
            generated += 1
            cid = f"{step}.c{iteration}"
            try:
                correction = self.planner.correct(self.world.state, prompt)
            except SchemaViolation as exc:
                self.trace.emit("correction_generate", step=step, iteration=iteration, psi=psi,
                                action=None, id=None, error=exc.event, message=str(exc))
                stack.update(f"planner produced invalid action: {exc.action_name or 'unnamed'}")
                continue
            except PlannerError as exc:
                self.trace.emit("correction_generate", step=step, iteration=iteration, psi=psi,
                                action=None, id=None, error=exc.event, message=str(exc))
                continue
            self.trace.emit("correction_generate", step=step, iteration=iteration, psi=psi,
                            action=str(correction), id=cid, error=None,
                            primitives=len(correction.primitives))
            report = self.execute_action(correction, step, cid, "correction")
            if report.flag:
                emptied, restored = self.retry_chain(stack, step)
                if emptied:
                    return StepOutcome("corrected", generated, generated, restored)
            else:
                try:
                    stack.push(CorrectionFrame(correction, report.info, report.level or "high", 1, cid))
                except StackExhausted:
                    break
                self.trace.emit("correction_push", step=step, depth=stack.depth(), id=cid,
                                action=str(correction), info=report.info, level=report.level)
        self.trace.emit("correction_exhausted", step=step, iterations=generated,
                        depth=stack.depth(), info=stack.top().info)
        return StepOutcome("exhausted", generated, generated)

    def retry_chain(self, stack: CorrectionStack, step: int) -> tuple[bool, bool | None]:
        """Re-run stacked actions top-down; ``(True, restored)`` once empty.

        On the first failure the top frame's cause is refreshed and
        ``(False, None)`` is returned (the stalled cause is on the stack top).
        """
        while stack.depth() > 0:
            top = stack.top()
            self.trace.emit("correction_retry", step=step, depth=stack.depth(), id=top.action_id,
                            action=str(top.action))
            report = self.execute_action(top.action, step, top.action_id, "retry")
            if not report.flag:
                stack.update(report.info)
                return False, None
            stack.pop()
            payload = dict(step=step, depth=stack.depth(), id=top.action_id, action=str(top.action))
            restored = None
            if stack.depth() == 0:
                restored = self._restored()
                payload["restored"] = restored
            self.trace.emit("correction_pop", **payload)
        return True, restored

    def _restored(self) -> bool | None:
        """Whether the world now sits at the failed action's desired successor."""
        if self._entry is None or self._original is None:
            return None
        try:
            expected = self.domain.expected_successor(self._entry, self._original)
        except (ChainBroken, InvariantBreach):
            return None
        return self.world.state.facts == expected.facts


def run_task(task: Task, world: SymbolicWorld, planner: Planner, config: ExecutorConfig | None = None,
             stream: IO[str] | None = None, header: dict | None = None) -> ExecutionTrace:
    trace = ExecutionTrace(header, stream)
    engine = Engine(task, world, planner, config or ExecutorConfig(), trace)
    return engine.run()
