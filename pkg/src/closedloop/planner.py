"""Planning boundary: initial plans and single-step corrections.

Three planners share one interface.  ``OraclePlanner`` searches the symbolic
transition system, ``ScriptedPlanner`` replays fixed plans and correction
tables, ``RemotePlanner`` speaks the ``hicrisp/1`` JSON protocol to an
external service (e.g. an LLM wrapper).
"""

from __future__ import annotations

import logging
import os
import re
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence
from urllib.parse import urlparse

import httpx

from .world import (
    Domain, DomainError, Fact, InvariantBreach, SemanticAction, SymbolicState, Task,
)

log = logging.getLogger(__name__)

PROTOCOL = "hicrisp/1"
DEFAULT_TIMEOUT = 30.0
TOKEN_ENV = "HICRISP_REMOTE_TOKEN"

PREAMBLE = (
    "You control a robot through named semantic actions. Each action expands into "
    "movement primitives with preconditions and effects. Answer with actions from the "
    "schema only, using entity names exactly as they appear in the state."
)


class PlannerError(Exception):
    event = "planner_error"


class NoPlanFound(PlannerError):
    event = "no_plan"


class NoCorrectionRule(PlannerError):
    event = "no_rule"


class PlannerTimeout(PlannerError):
    event = "timeout"


class PlannerTransport(PlannerError):
    event = "transport"


class SchemaViolation(PlannerError):
    event = "schema_violation"

    def __init__(self, message: str, action_name: str | None = None):
        super().__init__(message)
        self.action_name = action_name


class InvalidRemotePlan(SchemaViolation):
    pass


class InvalidRemoteCorrection(SchemaViolation):
    pass


class PlannerUnavailable(PlannerError):
    event = "unavailable"

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


# -- prompts ---------------------------------------------------------------

@dataclass(frozen=True)
class PromptBundle:
    task_text: str
    current_state_rendering: str
    error_info: str
    history: tuple[tuple[SemanticAction, str], ...] = ()
    predefined_preamble: str = PREAMBLE

    def render(self) -> str:
        parts = [self.predefined_preamble, f"Task: {self.task_text}", "State:", self.current_state_rendering]
        if self.history:
            parts.append("Unresolved actions (oldest first):")
            parts.extend(f"- {action}: {info}" for action, info in self.history)
        if self.error_info:
            parts.append(f"Error: {self.error_info}")
        return "\n".join(parts)


def render_state(state: SymbolicState) -> str:
    return "\n".join(state.literals())


def assemble_prompt(state: SymbolicState, error_info: str = "",
                    history: Iterable[tuple[SemanticAction, str]] = (), task_text: str = "") -> PromptBundle:
    return PromptBundle(
        task_text=task_text,
        current_state_rendering=render_state(state),
        error_info=error_info,
        history=tuple((a, i) for a, i in history),
    )


# -- planners ----------------------------------------------------------------

class Planner:
    kind = "abstract"

    def plan(self, initial_state: SymbolicState, task: Task) -> list[SemanticAction]:
        raise NotImplementedError

    def correct(self, error_state: SymbolicState, prompt: PromptBundle) -> SemanticAction:
        raise NotImplementedError


@dataclass(frozen=True)
class _Macro:
    action: SemanticAction
    pre: frozenset[Fact]
    add: frozenset[Fact]
    delete: frozenset[Fact]
    feasible: bool


def _compile(action: SemanticAction) -> _Macro:
    """Net preconditions and effects of a primitive chain."""
    pre, add, delete = set(), set(), set()
    feasible = True
    for prim in action.primitives:
        for p in prim.preconditions:
            if p in add:
                continue
            if p in delete:
                feasible = False
            pre.add(p)
        delete = (delete | prim.del_effects) - prim.add_effects
        add = (add - prim.del_effects) | prim.add_effects
    return _Macro(action, frozenset(pre), frozenset(add), frozenset(delete), feasible)


class OraclePlanner(Planner):
    """Breadth-first search over ground semantic actions.

    Successors are expanded in (name, params) order, so the first goal state
    reached yields the lexicographically least among the shortest plans.
    """

    kind = "oracle"

    def __init__(self, domain: Domain, depth_cap: int = 12, state_cap: int = 200_000):
        self.domain = domain
        self.depth_cap = depth_cap
        self.state_cap = state_cap
        self._macros: dict[tuple[str, ...] | None, list[_Macro]] = {}

    def macros(self, allowed: Sequence[str] | None = None) -> list[_Macro]:
        key = tuple(sorted(allowed)) if allowed is not None else None
        if key not in self._macros:
            self._macros[key] = [m for m in map(_compile, self.domain.ground_actions(key)) if m.feasible]
        return self._macros[key]

    def _step(self, facts: frozenset[Fact], m: _Macro) -> frozenset[Fact] | None:
        if not m.pre <= facts:
            return None
        result = (facts - m.delete) | m.add
        try:
            self.domain._check_functional(result, m.add, str(m.action))
        except InvariantBreach:
            return None
        return result

    def search(self, start: SymbolicState, done: Callable[[frozenset[Fact]], bool],
               allowed: Sequence[str] | None = None) -> list[SemanticAction] | None:
        if done(start.facts):
            return []
        macros = self.macros(allowed)
        parent: dict[frozenset[Fact], tuple[frozenset[Fact], SemanticAction] | None] = {start.facts: None}
        frontier = deque([(start.facts, 0)])
        while frontier:
            facts, depth = frontier.popleft()
            if depth >= self.depth_cap:
                continue
            for m in macros:
                nxt = self._step(facts, m)
                if nxt is None or nxt in parent:
                    continue
                parent[nxt] = (facts, m.action)
                if done(nxt):
                    plan = []
                    cur = nxt
                    while parent[cur] is not None:
                        prev, act = parent[cur]
                        plan.append(act)
                        cur = prev
                    return plan[::-1]
                if len(parent) > self.state_cap:
                    return None
                frontier.append((nxt, depth + 1))
        return None

    def plan(self, initial_state: SymbolicState, task: Task) -> list[SemanticAction]:
        goal = task.goal
        found = self.search(
            initial_state,
            lambda f: goal.required <= f and not (goal.forbidden & f),
            task.allowed_actions,
        )
        if found is None:
            raise NoPlanFound(f"no plan within {self.depth_cap} actions for {task.text!r}")
        return found

    def correct(self, error_state: SymbolicState, prompt: PromptBundle) -> SemanticAction:
        target = prompt.history[-1][0] if prompt.history else None
        violated = None
        if target is not None:
            violated = self.domain.first_violation(error_state, target)
        if violated is None:
            violated = self._named_fact(prompt.error_info, error_state)
        if violated is not None:
            establishers = [
                m.action for m in self.macros()
                if violated in m.add and self._step(error_state.facts, m) is not None
            ]
            if establishers:
                return establishers[0]
            if target is not None:
                done = lambda f: self.domain.applicable(SymbolicState(f), target)  # noqa: E731
            else:
                done = lambda f: violated in f  # noqa: E731
            sub = self.search(error_state, done)
            if sub:
                return sub[0]
            raise NoCorrectionRule(f"nothing establishes {violated}")
        recovery = self.domain.recovery
        if recovery is not None:
            action = self.domain.parse_action(recovery)
            if self.domain.applicable(error_state, action):
                return action
        raise NoCorrectionRule(f"no correction for: {prompt.error_info}")

    def _named_fact(self, text: str, state: SymbolicState) -> Fact | None:
        for m in re.finditer(r"([A-Za-z_]\w*)\(([^()]*)\)", text or ""):
            try:
                fact = Fact.parse(m.group(0))
            except DomainError:
                continue
            if self.domain.predicates.get(fact.name) == len(fact.args) and fact not in state.facts:
                return fact
        return None


class ScriptedPlanner(Planner):
    """Replays a fixed plan and a table of error-pattern -> correction rules."""

    kind = "scripted"

    def __init__(self, domain: Domain, plans: Mapping[str, Sequence[str]],
                 corrections: Sequence[tuple[str, str]] = ()):
        self.domain = domain
        self.plans = {tid: [domain.parse_action(a) for a in steps] for tid, steps in plans.items()}
        self.corrections = [(re.compile(pat, re.IGNORECASE), domain.parse_action(a)) for pat, a in corrections]
        for steps in self.plans.values():
            for a in steps:
                for w in domain.kind_warnings(a.name, a.params):
                    log.warning("scripted plan: %s", w)

    @classmethod
    def from_config(cls, domain: Domain, task: Task, cfg: Mapping) -> "ScriptedPlanner":
        plans = cfg.get("plans") or {task.id or "default": cfg.get("plan", [])}
        rules = [(r["when"], r["action"]) for r in cfg.get("corrections", ())]
        return cls(domain, plans, rules)

    def plan(self, initial_state: SymbolicState, task: Task) -> list[SemanticAction]:
        for key in (task.id, "default"):
            if key in self.plans:
                return list(self.plans[key])
        raise NoPlanFound(f"no scripted plan for task {task.id!r}")

    def correct(self, error_state: SymbolicState, prompt: PromptBundle) -> SemanticAction:
        for pattern, action in self.corrections:
            if pattern.search(prompt.error_info):
                return action
        raise NoCorrectionRule(f"no scripted correction matches {prompt.error_info!r}")


# -- remote ------------------------------------------------------------------

@dataclass(frozen=True)
class PlannerKind:
    kind: str
    endpoint: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("oracle", "scripted", "remote"):
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.kind == "remote":
            url = urlparse(self.endpoint or "")
            if url.scheme not in ("http", "https") or not url.netloc:
                raise ValueError(f"remote planner needs an http(s) endpoint, got {self.endpoint!r}")

    @classmethod
    def parse(cls, text: str) -> "PlannerKind":
        kind, _, endpoint = text.partition("=")
        return cls(kind, endpoint or None)

    def __str__(self) -> str:
        return f"remote={self.endpoint}" if self.kind == "remote" else self.kind


def action_schema(domain: Domain) -> list[dict]:
    out = []
    for name in sorted(domain.actions):
        a = domain.actions[name]
        out.append({
            "name": name,
            "params": [{"name": p, "kind": k} for p, k in zip(a.params, a.param_kinds)],
            "steps": [str(s) for s in a.steps],
        })
    return out


class RemotePlanner(Planner):
    kind = "remote"

    def __init__(self, endpoint: str, domain: Domain, timeout: float = DEFAULT_TIMEOUT,
                 token: str | None = None, transport: httpx.BaseTransport | None = None):
        PlannerKind("remote", endpoint)
        self.endpoint = endpoint.rstrip("/")
        self.domain = domain
        self.timeout = timeout
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def payload(self, state: SymbolicState, task_text: str, prompt: PromptBundle | None = None) -> dict:
        body = {
            "protocol": PROTOCOL,
            "task": task_text,
            "state_facts": state.literals(),
            "action_schema": action_schema(self.domain),
            "entities": [{"id": e.id, "kind": e.kind} for e in sorted(self.domain.entities.values(), key=lambda e: e.id)],
        }
        if prompt is not None:
            body["error_info"] = prompt.error_info
            body["history"] = [{"action": a.to_dict(), "info": info} for a, info in prompt.history]
            body["preamble"] = prompt.predefined_preamble
        return body

    def remote_call(self, route: str, body: dict) -> dict:
        try:
            resp = self._client.post(f"{self.endpoint}/{route}", json=body)
        except httpx.TimeoutException as exc:
            raise PlannerTimeout(f"{route}: no answer within {self.timeout}s") from exc
        except httpx.TransportError as exc:
            raise PlannerTransport(f"{route}: {exc}") from exc
        if resp.status_code != 200:
            raise PlannerTransport(f"{route}: HTTP {resp.status_code}")
        try:
            doc = resp.json()
        except ValueError:
            raise SchemaViolation(f"{route}: response is not JSON") from None
        if not isinstance(doc, dict) or not isinstance(doc.get("actions"), list):
            raise SchemaViolation(f"{route}: response lacks an 'actions' list")
        if doc.get("protocol", PROTOCOL) != PROTOCOL:
            raise SchemaViolation(f"{route}: unsupported protocol {doc.get('protocol')!r}")
        return doc

    def _actions(self, doc: dict, err: type[SchemaViolation]) -> list[SemanticAction]:
        out = []
        for item in doc["actions"]:
            if not isinstance(item, dict) or not isinstance(item.get("name"), str):
                raise err("action entries need a string 'name'")
            name = item["name"]
            params = item.get("params", [])
            if not isinstance(params, list) or not all(isinstance(p, str) for p in params):
                raise err(f"{name}: params must be a list of strings", name)
            try:
                out.append(self.domain.action(name, params))
            except DomainError as exc:
                raise err(f"{name}: {exc}", name) from None
        return out

    def plan(self, initial_state: SymbolicState, task: Task) -> list[SemanticAction]:
        doc = self.remote_call("plan", self.payload(initial_state, task.text))
        return self._actions(doc, InvalidRemotePlan)

    def correct(self, error_state: SymbolicState, prompt: PromptBundle) -> SemanticAction:
        doc = self.remote_call("correct", self.payload(error_state, prompt.task_text, prompt))
        actions = self._actions(doc, InvalidRemoteCorrection)
        if len(actions) != 1:
            raise InvalidRemoteCorrection(f"expected exactly one correction action, got {len(actions)}")
        return actions[0]


def make_planner(kind: PlannerKind | str, domain: Domain, task: Task | None = None,
                 script: Mapping | None = None, timeout: float = DEFAULT_TIMEOUT) -> Planner:
    if isinstance(kind, str):
        kind = PlannerKind.parse(kind)
    if kind.kind == "oracle":
        return OraclePlanner(domain)
    if kind.kind == "scripted":
        if not script or task is None:
            raise ValueError("scripted planner needs a scenario with a script")
        return ScriptedPlanner.from_config(domain, task, script)
    return RemotePlanner(kind.endpoint, domain, timeout=timeout)
