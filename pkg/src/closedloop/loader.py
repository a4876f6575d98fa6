"""Loading and validating domain and scenario files.

Both file kinds are JSON documents.  Errors carry ``file:line`` of the
offending entry; line numbers are recovered by composing the same text with
the YAML parser, which keeps node positions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .environments.faults import FaultRule
from .environments.tabletop import warmth
from .world import (
    ActionSchema, CheckRule, Domain, DomainError, Entity, Fact, Goal, PrimitiveSchema,
    SymbolicState, Task, WorldModelError, is_var,
)

log = logging.getLogger(__name__)

DOMAIN_SECTIONS = ("entities", "predicates", "primitives", "actions", "initial_state", "goal")


class ConfigError(DomainError):
    def __init__(self, message: str, file: str = "", line: int | None = None):
        self.message = message
        self.file = file
        self.line = line
        where = f"{file}:{line}: " if file and line else (f"{file}: " if file else "")
        super().__init__(where + message)


class _Bad(Exception):
    def __init__(self, path: tuple, message: str):
        self.path = path
        self.message = message
        super().__init__(message)


def data_dir() -> Path:
    return Path(str(resources.files("closedloop") / "data"))


def locate(text: str, path: tuple) -> int | None:
    """1-based line of the node at ``path`` (keys / indices) in ``text``."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    best = node.start_mark.line + 1 if node is not None else None
    for step in path:
        if node is None:
            break
        nxt = None
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == str(step):
                    nxt = v
                    best = k.start_mark.line + 1
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(step, int) and step < len(node.value):
            nxt = node.value[step]
            best = nxt.start_mark.line + 1
        node = nxt
    return best


def _read(path: Path) -> tuple[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}", str(path)) from None
    try:
        return text, json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", str(path), exc.lineno) from None


def resolve_domain_path(ref: str, base: Path | None = None) -> Path:
    p = Path(ref)
    if p.suffix != ".json" and "/" not in ref:
        return data_dir() / "domains" / f"{ref}.json"
    if not p.is_absolute() and base is not None:
        return (base / p).resolve()
    return p


# -- parsing helpers -------------------------------------------------------

def _fact(raw, path, predicates=None) -> Fact:
    try:
        f = Fact.parse(raw)
    except DomainError as exc:
        raise _Bad(path, str(exc)) from None
    if predicates is not None:
        if f.name not in predicates:
            raise _Bad(path, f"undeclared predicate {f.name!r} in {f}")
        if predicates[f.name] != len(f.args):
            raise _Bad(path, f"{f}: {f.name} has arity {predicates[f.name]}")
    return f


def _params(raw, path) -> tuple[tuple[str, ...], tuple[str | None, ...]]:
    names, kinds = [], []
    for i, p in enumerate(raw or ()):
        name, _, kind = str(p).partition(":")
        if not is_var(name):
            raise _Bad(path + (i,), f"parameter {p!r} must start with '?'")
        names.append(name)
        kinds.append(kind or None)
    return tuple(names), tuple(kinds)


def _entities(raw: Mapping, path) -> dict[str, Entity]:
    out = {}
    for eid, spec in raw.items():
        if isinstance(spec, str):
            spec = {"kind": spec}
        attrs = {k: v for k, v in spec.items() if k != "kind"}
        if "color" in attrs:
            try:
                attrs.setdefault("warmth", warmth(str(attrs["color"])))
            except ValueError as exc:
                raise _Bad(path + (eid, "color"), str(exc)) from None
        try:
            out[eid] = Entity(eid, spec.get("kind", ""), attrs)
        except DomainError as exc:
            raise _Bad(path + (eid,), str(exc)) from None
    return out


def _goal(raw, path, predicates, entities) -> Goal:
    if raw is None:
        return Goal()
    if isinstance(raw, list):
        raw = {"required": raw}
    required = [_fact(x, path + ("required", i), predicates) for i, x in enumerate(raw.get("required", ()))]
    forbidden = [_fact(x, path + ("forbidden", i), predicates) for i, x in enumerate(raw.get("forbidden", ()))]
    for j, q in enumerate(raw.get("forall", ())):
        qp = path + ("forall", j)
        var, _, kind = str(q["var"]).partition(":")
        where = q.get("where", {})
        pool = sorted(
            e.id for e in entities.values()
            if (not kind or e.kind == kind) and all(e.attributes.get(k) == v for k, v in where.items())
        )
        if not pool:
            raise _Bad(qp, f"quantifier {q['var']} with {where} matches no entity")
        for ent in pool:
            for i, x in enumerate(q.get("required", ())):
                required.append(_fact(x, qp + ("required", i)).substitute({var: ent}))
            for i, x in enumerate(q.get("forbidden", ())):
                forbidden.append(_fact(x, qp + ("forbidden", i)).substitute({var: ent}))
    try:
        return Goal(frozenset(required), frozenset(forbidden))
    except DomainError as exc:
        raise _Bad(path, str(exc)) from None


def _state(raw, path, predicates) -> SymbolicState:
    return SymbolicState(frozenset(_fact(x, path + (i,), predicates) for i, x in enumerate(raw or ())))


def _parse_domain(doc: Mapping, source: str) -> Domain:
    if not isinstance(doc, Mapping):
        raise _Bad((), "domain document must be an object")
    for section in ("entities", "predicates", "primitives", "actions"):
        if section not in doc:
            raise _Bad((), f"missing section {section!r}")
    predicates = {}
    for name, arity in doc["predicates"].items():
        if not isinstance(arity, int) or arity < 0:
            raise _Bad(("predicates", name), f"arity of {name} must be a non-negative integer")
        predicates[name] = arity
    entities = _entities(doc["entities"], ("entities",))

    primitives = {}
    for name, spec in doc["primitives"].items():
        path = ("primitives", name)
        params, kinds = _params(spec.get("params"), path + ("params",))
        checks = []
        for i, c in enumerate(spec.get("checks", ())):
            cp = path + ("checks", i)
            checks.append(CheckRule(
                missing=_fact(c["missing"], cp + ("missing",), predicates),
                match=tuple(_fact(m, cp + ("match", j), predicates) for j, m in enumerate(c.get("match", ()))),
                fix=tuple(_fact(f, cp + ("fix", j)) for j, f in enumerate(c.get("fix", ()))),
            ))
        primitives[name] = PrimitiveSchema(
            name=name, params=params, param_kinds=kinds,
            pre=tuple(_fact(x, path + ("pre", i), predicates) for i, x in enumerate(spec.get("pre", ()))),
            add=tuple(_fact(x, path + ("add", i), predicates) for i, x in enumerate(spec.get("add", ()))),
            delete=tuple(_fact(x, path + ("del", i), predicates) for i, x in enumerate(spec.get("del", ()))),
            checks=tuple(checks),
            effector=spec.get("effector"),
        )

    actions = {}
    for name, spec in doc["actions"].items():
        path = ("actions", name)
        params, kinds = _params(spec.get("params"), path + ("params",))
        steps = tuple(_fact(s, path + ("steps", i)) for i, s in enumerate(spec.get("steps", ())))
        if not steps:
            raise _Bad(path, f"action {name} needs at least one step")
        actions[name] = ActionSchema(name, params, kinds, steps)

    functional = {}
    for name, keys in doc.get("functional", {}).items():
        if name not in predicates:
            raise _Bad(("functional", name), f"functional constraint on undeclared predicate {name!r}")
        functional[name] = tuple(keys)

    tasks = {}
    for tid, spec in doc.get("tasks", {}).items():
        tp = ("tasks", tid)
        try:
            tasks[tid] = Task(
                text=spec.get("text", ""),
                goal=_goal(spec.get("goal"), tp + ("goal",), predicates, entities),
                id=tid,
                initial_state=_state(spec["initial_state"], tp + ("initial_state",), predicates)
                if "initial_state" in spec else None,
                allowed_actions=tuple(spec["actions"]) if "actions" in spec else None,
            )
        except DomainError as exc:
            raise _Bad(tp, str(exc)) from None

    recovery = doc.get("recovery")
    return Domain(
        name=doc.get("name", Path(source).stem),
        predicates=predicates,
        entities=entities,
        primitives=primitives,
        actions=actions,
        initial_state=_state(doc.get("initial_state"), ("initial_state",), predicates),
        goal=_goal(doc.get("goal"), ("goal",), predicates, entities),
        world=doc.get("world", "symbolic"),
        functional=functional,
        hidden=frozenset(doc.get("hidden", ())),
        messages=dict(doc.get("messages", {})),
        recovery=_fact(recovery, ("recovery",)) if recovery else None,
        tasks=tasks,
        grid=doc.get("grid"),
        source=source,
    )


def parse_domain(doc: Mapping, source: str = "<memory>", text: str | None = None) -> Domain:
    try:
        return _parse_domain(doc, source)
    except _Bad as bad:
        line = locate(text, bad.path) if text is not None else None
        raise ConfigError(bad.message, source, line) from None
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"malformed domain document ({exc})", source) from None


def load_domain(ref: str | Path, base: Path | None = None) -> Domain:
    path = resolve_domain_path(str(ref), base)
    text, doc = _read(path)
    return parse_domain(doc, str(path), text)


# -- validation ------------------------------------------------------------

@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_domain(domain: Domain) -> ValidationReport:
    """Structural checks beyond what parsing enforces."""
    rep = ValidationReport()
    for name, schema in domain.primitives.items():
        overlap = set(schema.add) & set(schema.delete)
        if overlap:
            rep.errors.append(f"primitive {name}: {sorted(map(str, overlap))} both added and deleted")
        params = set(schema.params)
        for f in schema.pre + schema.add + schema.delete:
            for var in f.variables:
                if var not in params:
                    rep.errors.append(f"primitive {name}: unbound variable {var} in {f}")
            for arg in f.args:
                if not is_var(arg) and arg not in domain.entities:
                    rep.errors.append(f"primitive {name}: unknown entity {arg!r} in {f}")
        for check in schema.checks:
            for fix in check.fix:
                target = domain.primitives.get(fix.name)
                if target is None:
                    rep.errors.append(f"primitive {name}: check fix references undeclared primitive {fix.name!r}")
                elif len(target.params) != len(fix.args):
                    rep.errors.append(f"primitive {name}: fix {fix} has wrong arity")
        for kind in schema.param_kinds:
            if kind is not None and not any(e.kind == kind for e in domain.entities.values()):
                rep.warnings.append(f"primitive {name}: no entity of kind {kind!r}")
    for name, schema in domain.actions.items():
        _validate_action(domain, name, schema, rep)
    problems = domain.functional_violations(domain.initial_state)
    rep.errors.extend(f"initial_state: {p}" for p in problems)
    for tid, task in domain.tasks.items():
        if task.initial_state is not None:
            rep.errors.extend(f"task {tid}: {p}" for p in domain.functional_violations(task.initial_state))
        for a in task.allowed_actions or ():
            if a not in domain.actions:
                rep.errors.append(f"task {tid}: unknown action {a!r}")
        for f in task.goal.required | task.goal.forbidden:
            for arg in f.args:
                if arg not in domain.entities:
                    rep.errors.append(f"task {tid}: goal fact {f} names unknown entity {arg!r}")
    if domain.recovery is not None:
        try:
            domain.parse_action(domain.recovery)
        except DomainError as exc:
            rep.errors.append(f"recovery: {exc}")
    if domain.world == "grid":
        if not domain.grid:
            rep.errors.append("grid world needs a 'grid' section")
        for e in domain.entities.values():
            if e.kind == "landmark" and "cell" not in e.attributes:
                rep.errors.append(f"landmark {e.id} has no cell")
    return rep


def _validate_action(domain: Domain, name: str, schema: ActionSchema, rep: ValidationReport) -> None:
    params = set(schema.params)
    available: set[Fact] = set()
    deleted: set[Fact] = set()
    for i, step in enumerate(schema.steps):
        prim = domain.primitives.get(step.name)
        if prim is None:
            rep.errors.append(f"action {name}: step {i} references undeclared primitive {step.name!r}")
            return
        if len(prim.params) != len(step.args):
            rep.errors.append(f"action {name}: step {step} has wrong arity")
            return
        for arg in step.args:
            if is_var(arg) and arg not in params:
                rep.errors.append(f"action {name}: unbound variable {arg} in step {step}")
            if not is_var(arg) and arg not in domain.entities:
                rep.errors.append(f"action {name}: unknown entity {arg!r} in step {step}")
        # the step's preconditions, lifted into the action's variables
        b = dict(zip(prim.params, step.args))
        for kind, arg in zip(prim.param_kinds, step.args):
            akind = schema.param_kinds[schema.params.index(arg)] if arg in params else (
                domain.entities[arg].kind if arg in domain.entities else None)
            if kind and akind and kind != akind:
                rep.warnings.append(f"action {name}: step {step} passes a {akind} where {kind} is expected")
        for pre in prim.pre:
            lifted = pre.substitute(b)
            if lifted in deleted and lifted not in available:
                rep.errors.append(
                    f"action {name}: step {i} {step} needs {lifted}, deleted by an earlier step"
                )
        for d in prim.delete:
            lifted = d.substitute(b)
            deleted.add(lifted)
            available.discard(lifted)
        for a in prim.add:
            lifted = a.substitute(b)
            available.add(lifted)
            deleted.discard(lifted)


# -- scenarios -------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    domain: Domain
    task: Task
    faults: tuple[FaultRule, ...] = ()
    planner: dict = field(default_factory=lambda: {"kind": "oracle"})
    config: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)
    path: str = ""

    @property
    def initial_state(self) -> SymbolicState:
        return self.task.initial_state if self.task.initial_state is not None else self.domain.initial_state

    def without_faults(self) -> "Scenario":
        return Scenario(self.name, self.domain, self.task, (), {"kind": "oracle"},
                        dict(self.config), dict(self.expect), self.path)


def task_for(domain: Domain, task_id: str | None) -> Task:
    if task_id:
        if task_id not in domain.tasks:
            raise ConfigError(f"domain {domain.name} has no task {task_id!r}", domain.source)
        return domain.tasks[task_id]
    if len(domain.tasks) == 1:
        return next(iter(domain.tasks.values()))
    return Task(text=f"reach the goal of {domain.name}", goal=domain.goal, id="default")


def parse_scenario(doc: Mapping, source: str, text: str | None = None) -> Scenario:
    base = Path(source).parent
    try:
        if not isinstance(doc, Mapping) or "domain" not in doc:
            raise _Bad((), "scenario needs a 'domain' entry")
        domain = load_domain(doc["domain"], base)
        task = task_for(domain, doc.get("task"))
        faults = []
        for i, raw in enumerate(doc.get("faults", ())):
            try:
                rule = FaultRule.from_dict(raw)
            except (DomainError, KeyError, TypeError, AttributeError) as exc:
                raise _Bad(("faults", i), f"bad fault rule: {exc}") from None
            if rule.primitive is not None and rule.primitive not in domain.primitives:
                raise _Bad(("faults", i), f"fault names unknown primitive {rule.primitive!r}")
            if rule.action is not None and rule.action not in domain.actions:
                raise _Bad(("faults", i), f"fault names unknown action {rule.action!r}")
            for f in rule.add + rule.delete:
                if f.name not in domain.predicates:
                    raise _Bad(("faults", i), f"fault effect uses undeclared predicate {f.name!r}")
            if rule.divert_to is not None and rule.divert_to not in domain.entities:
                raise _Bad(("faults", i), f"divert_to names unknown landmark {rule.divert_to!r}")
            faults.append(rule)
        planner = doc.get("planner", "oracle")
        if isinstance(planner, str):
            planner = {"kind": planner}
        if planner.get("kind") == "scripted":
            for i, step in enumerate(planner.get("plan", ())):
                try:
                    domain.parse_action(step)
                except DomainError as exc:
                    raise _Bad(("planner", "plan", i), str(exc)) from None
            for i, rule in enumerate(planner.get("corrections", ())):
                try:
                    domain.parse_action(rule["action"])
                except (DomainError, KeyError) as exc:
                    raise _Bad(("planner", "corrections", i), f"bad correction rule: {exc}") from None
        return Scenario(
            name=doc.get("name", Path(source).stem),
            domain=domain,
            task=task,
            faults=tuple(faults),
            planner=dict(planner),
            config=dict(doc.get("config", {})),
            expect=dict(doc.get("expect", {})),
            path=source,
        )
    except _Bad as bad:
        line = locate(text, bad.path) if text is not None else None
        raise ConfigError(bad.message, source, line) from None
    except ConfigError:
        raise
    except WorldModelError as exc:
        raise ConfigError(str(exc), source) from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text, doc = _read(path)
    return parse_scenario(doc, str(path), text)


def shipped_scenarios(group: str | None = None) -> list[Path]:
    root = data_dir() / "scenarios"
    pattern = f"{group}/*.json" if group else "**/*.json"
    return sorted(root.glob(pattern))
