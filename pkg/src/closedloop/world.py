"""Symbolic world model: facts, states, primitives, semantic actions, goals.

A domain is a small STRIPS-like transition system.  Movement primitives carry
preconditions, add/delete effects and predefined error-check rules; semantic
actions are ordered chains of primitives.  All values are immutable, new
states are produced by applying effects.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

KINDS = frozenset(
    {
        "block", "bowl", "box", "cylinder", "landmark", "obstacle", "agent", "gripper",
        # household scenes need these three as well
        "item", "furniture", "location",
    }
)

_LITERAL_RE = re.compile(r"^\s*([A-Za-z_][\w\-]*)\s*(?:\((.*)\))?\s*$")


class WorldModelError(Exception):
    pass


class DomainError(WorldModelError):
    """Malformed domain, unknown action/entity, or arity mismatch."""


class UnknownPredicate(WorldModelError):
    pass


class PreconditionViolation(WorldModelError):
    def __init__(self, prim: "MovementPrimitive", violations: Sequence["Fact"]):
        self.primitive = prim
        self.violations = list(violations)
        missing = ", ".join(str(v) for v in self.violations)
        super().__init__(f"{prim}: unsatisfied preconditions {missing}")


class InvariantBreach(WorldModelError):
    pass


class ChainBroken(WorldModelError):
    """An intermediate primitive of a semantic action is not applicable."""

    def __init__(self, action: "SemanticAction", index: int, violations: Sequence["Fact"]):
        self.action = action
        self.index = index
        self.violations = list(violations)
        prim = action.primitives[index]
        missing = ", ".join(str(v) for v in self.violations)
        super().__init__(f"{action}: step {index} {prim} needs {missing}")


class Fact(NamedTuple):
    """A ground (or pattern) predicate, e.g. ``in(block_red, bowl_green)``."""

    name: str
    args: tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"{self.name}({', '.join(self.args)})"

    @classmethod
    def parse(cls, text: "str | Fact | Sequence[str]") -> "Fact":
        if isinstance(text, Fact):
            return text
        if not isinstance(text, str):
            items = list(text)
            if not items:
                raise DomainError("empty fact literal")
            return cls(str(items[0]), tuple(str(a) for a in items[1:]))
        m = _LITERAL_RE.match(text)
        if not m:
            raise DomainError(f"bad fact literal: {text!r}")
        name, inner = m.group(1), m.group(2)
        args = tuple(a.strip() for a in inner.split(",")) if inner and inner.strip() else ()
        if any(not a for a in args):
            raise DomainError(f"bad fact literal: {text!r}")
        return cls(name, args)

    def substitute(self, binding: Mapping[str, str]) -> "Fact":
        return Fact(self.name, tuple(binding.get(a, a) for a in self.args))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(a for a in self.args if is_var(a))


def is_var(token: str) -> bool:
    return token.startswith("?")


def facts(*literals: "str | Fact") -> frozenset[Fact]:
    return frozenset(Fact.parse(x) for x in literals)


@dataclass(frozen=True)
class Entity:
    id: str
    kind: str
    attributes: Mapping[str, object] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DomainError(f"entity {self.id!r}: unknown kind {self.kind!r}")

    @property
    def label(self) -> str:
        return str(self.attributes.get("label", self.id))


@dataclass(frozen=True)
class SymbolicState:
    facts: frozenset[Fact] = frozenset()

    @classmethod
    def of(cls, *literals: "str | Fact") -> "SymbolicState":
        return cls(facts(*literals))

    def __contains__(self, fact: object) -> bool:
        if isinstance(fact, str):
            fact = Fact.parse(fact)
        return fact in self.facts

    def __iter__(self) -> Iterator[Fact]:
        return iter(sorted(self.facts))

    def __len__(self) -> int:
        return len(self.facts)

    def sorted(self) -> list[Fact]:
        return sorted(self.facts)

    def literals(self) -> list[str]:
        return [str(f) for f in sorted(self.facts)]

    def restrict(self, names: Iterable[str]) -> frozenset[Fact]:
        names = set(names)
        return frozenset(f for f in self.facts if f.name in names)

    def __str__(self) -> str:
        return "{" + ", ".join(self.literals()) + "}"


@dataclass(frozen=True)
class CheckRule:
    """Predefined error check: when ``missing`` is absent, run ``fix`` first.

    ``match`` patterns bind extra variables (e.g. the currently held object)
    against the live state before the fix sequence is grounded.
    """

    missing: Fact
    match: tuple[Fact, ...] = ()
    fix: tuple[Fact, ...] = ()


@dataclass(frozen=True)
class MovementPrimitive:
    name: str
    params: tuple[str, ...]
    preconditions: tuple[Fact, ...] = ()
    add_effects: frozenset[Fact] = frozenset()
    del_effects: frozenset[Fact] = frozenset()
    checks: tuple[CheckRule, ...] = ()
    param_names: tuple[str, ...] = ()
    effector: str | None = None

    def __str__(self) -> str:
        return f"{self.name}({', '.join(self.params)})"

    @property
    def binding(self) -> dict[str, str]:
        return dict(zip(self.param_names, self.params))


@dataclass(frozen=True)
class SemanticAction:
    name: str
    params: tuple[str, ...]
    primitives: tuple[MovementPrimitive, ...]

    def __post_init__(self) -> None:
        if not self.primitives:
            raise DomainError(f"action {self.name} has no primitives")

    def __str__(self) -> str:
        return f"{self.name}({', '.join(self.params)})"

    @property
    def key(self) -> tuple[str, tuple[str, ...]]:
        return (self.name, self.params)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": list(self.params)}


@dataclass(frozen=True)
class Goal:
    required: frozenset[Fact] = frozenset()
    forbidden: frozenset[Fact] = frozenset()

    def __post_init__(self) -> None:
        clash = self.required & self.forbidden
        if clash:
            raise DomainError(f"goal both requires and forbids {sorted(map(str, clash))}")

    @classmethod
    def of(cls, required: Iterable[str] = (), forbidden: Iterable[str] = ()) -> "Goal":
        return cls(facts(*required), facts(*forbidden))


@dataclass(frozen=True)
class Task:
    text: str
    goal: Goal
    id: str = ""
    initial_state: SymbolicState | None = None
    allowed_actions: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DomainError("task text must be non-empty")


def satisfies(state: SymbolicState, goal: Goal) -> bool:
    return goal.required <= state.facts and not (goal.forbidden & state.facts)


@dataclass(frozen=True)
class PrimitiveSchema:
    name: str
    params: tuple[str, ...]
    param_kinds: tuple[str | None, ...]
    pre: tuple[Fact, ...] = ()
    add: tuple[Fact, ...] = ()
    delete: tuple[Fact, ...] = ()
    checks: tuple[CheckRule, ...] = ()
    effector: str | None = None

    def ground(self, args: Sequence[str]) -> MovementPrimitive:
        if len(args) != len(self.params):
            raise DomainError(f"{self.name} expects {len(self.params)} args, got {len(args)}")
        b = dict(zip(self.params, args))
        checks = tuple(
            CheckRule(
                missing=c.missing.substitute(b),
                match=tuple(m.substitute(b) for m in c.match),
                fix=tuple(f.substitute(b) for f in c.fix),
            )
            for c in self.checks
        )
        return MovementPrimitive(
            name=self.name,
            params=tuple(args),
            preconditions=tuple(p.substitute(b) for p in self.pre),
            add_effects=frozenset(p.substitute(b) for p in self.add),
            del_effects=frozenset(p.substitute(b) for p in self.delete),
            checks=checks,
            param_names=self.params,
            effector=self.effector,
        )


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[str, ...]
    param_kinds: tuple[str | None, ...]
    steps: tuple[Fact, ...]


@dataclass
class Domain:
    """A loaded world: signature, entities, primitives, actions, defaults."""

    name: str
    predicates: dict[str, int]
    entities: dict[str, Entity]
    primitives: dict[str, PrimitiveSchema]
    actions: dict[str, ActionSchema]
    initial_state: SymbolicState = field(default_factory=SymbolicState)
    goal: Goal = field(default_factory=Goal)
    world: str = "symbolic"
    functional: dict[str, tuple[int, ...]] = field(default_factory=dict)
    hidden: frozenset[str] = frozenset()
    messages: dict[str, dict[str, str]] = field(default_factory=dict)
    recovery: Fact | None = None
    tasks: dict[str, Task] = field(default_factory=dict)
    grid: dict | None = None
    source: str = ""

    # -- signature ---------------------------------------------------------
    @property
    def perceivable(self) -> frozenset[str]:
        return frozenset(self.predicates) - self.hidden

    def _check_declared(self, fact: Fact) -> None:
        arity = self.predicates.get(fact.name)
        if arity is None:
            raise UnknownPredicate(f"undeclared predicate {fact.name!r} in {fact}")
        if arity != len(fact.args):
            raise UnknownPredicate(f"{fact}: {fact.name} has arity {arity}")

    # -- transition model --------------------------------------------------
    def check_preconditions(self, state: SymbolicState, prim: MovementPrimitive) -> list[Fact]:
        """Unsatisfied preconditions of ``prim`` in declaration order."""
        for f in itertools.chain(prim.preconditions, prim.add_effects, prim.del_effects):
            self._check_declared(f)
        return [p for p in prim.preconditions if p not in state.facts]

    def apply_effects(self, state: SymbolicState, prim: MovementPrimitive) -> SymbolicState:
        violations = self.check_preconditions(state, prim)
        if violations:
            raise PreconditionViolation(prim, violations)
        result = (state.facts - prim.del_effects) | prim.add_effects
        self._check_functional(result, prim.add_effects, context=str(prim))
        return SymbolicState(result)

    def apply_raw(self, state: SymbolicState, add: Iterable[Fact], delete: Iterable[Fact],
                  context: str = "") -> SymbolicState:
        """Apply effects without precondition checks (used for injected faults)."""
        add = frozenset(add)
        result = (state.facts - frozenset(delete)) | add
        self._check_functional(result, add, context=context)
        return SymbolicState(result)

    def _check_functional(self, result: frozenset[Fact], added: Iterable[Fact], context: str) -> None:
        for fact in added:
            key_pos = self.functional.get(fact.name)
            if key_pos is None:
                continue
            key = tuple(fact.args[i] for i in key_pos)
            clash = [
                f for f in result
                if f.name == fact.name and f != fact and tuple(f.args[i] for i in key_pos) == key
            ]
            if clash:
                raise InvariantBreach(
                    f"{context}: adding {fact} breaks functional {fact.name}{list(key_pos)} "
                    f"(already {', '.join(map(str, sorted(clash)))})"
                )

    def functional_violations(self, state: SymbolicState) -> list[str]:
        seen: dict[tuple, Fact] = {}
        out = []
        for fact in sorted(state.facts):
            key_pos = self.functional.get(fact.name)
            if key_pos is None:
                continue
            key = (fact.name,) + tuple(fact.args[i] for i in key_pos)
            if key in seen:
                out.append(f"{seen[key]} and {fact} violate functional {fact.name}{list(key_pos)}")
            else:
                seen[key] = fact
        return out

    def expected_successor(self, state: SymbolicState, action: SemanticAction) -> SymbolicState:
        current = state
        for i, prim in enumerate(action.primitives):
            violations = self.check_preconditions(current, prim)
            if violations:
                raise ChainBroken(action, i, violations)
            current = self.apply_effects(current, prim)
        return current

    def applicable(self, state: SymbolicState, action: SemanticAction) -> bool:
        try:
            self.expected_successor(state, action)
        except (ChainBroken, InvariantBreach):
            return False
        return True

    def first_violation(self, state: SymbolicState, action: SemanticAction) -> Fact | None:
        """First precondition that breaks ``action``'s chain from ``state``."""
        try:
            self.expected_successor(state, action)
        except ChainBroken as exc:
            return exc.violations[0]
        except InvariantBreach:
            return None
        return None

    # -- grounding ---------------------------------------------------------
    def _check_args(self, what: str, kinds: Sequence[str | None], args: Sequence[str]) -> list[str]:
        warnings = []
        for kind, arg in zip(kinds, args):
            ent = self.entities.get(arg)
            if ent is None:
                raise DomainError(f"{what}: unknown entity {arg!r}")
            if kind is not None and ent.kind != kind:
                warnings.append(f"{what}: {arg} is a {ent.kind}, expected {kind}")
        return warnings

    def primitive(self, name: str, args: Sequence[str]) -> MovementPrimitive:
        schema = self.primitives.get(name)
        if schema is None:
            raise DomainError(f"unknown primitive {name!r}")
        return schema.ground(tuple(args))

    def action(self, name: str, args: Sequence[str] = ()) -> SemanticAction:
        schema = self.actions.get(name)
        if schema is None:
            raise DomainError(f"unknown action {name!r}")
        args = tuple(args)
        if len(args) != len(schema.params):
            raise DomainError(f"action {name} expects {len(schema.params)} args, got {len(args)}")
        self._check_args(f"{name}{args}", schema.param_kinds, args)
        b = dict(zip(schema.params, args))
        prims = tuple(self.primitive(s.name, s.substitute(b).args) for s in schema.steps)
        return SemanticAction(name, args, prims)

    def parse_action(self, text: "str | Fact") -> SemanticAction:
        lit = Fact.parse(text)
        return self.action(lit.name, lit.args)

    def kind_warnings(self, name: str, args: Sequence[str]) -> list[str]:
        schema = self.actions[name]
        return self._check_args(name, schema.param_kinds, args)

    def _candidates(self, kind: str | None) -> list[str]:
        return sorted(e.id for e in self.entities.values() if kind is None or e.kind == kind)

    def ground_actions(self, allowed: Iterable[str] | None = None) -> list[SemanticAction]:
        """Every ground semantic action, sorted by (name, params)."""
        names = sorted(self.actions) if allowed is None else sorted(set(allowed))
        out = []
        for name in names:
            schema = self.actions[name]
            pools = [self._candidates(k) for k in schema.param_kinds]
            for args in itertools.product(*pools):
                out.append(self.action(name, args))
        out.sort(key=lambda a: a.key)
        return out

    def ground_primitives(self) -> list[MovementPrimitive]:
        out = []
        for name in sorted(self.primitives):
            schema = self.primitives[name]
            pools = [self._candidates(k) for k in schema.param_kinds]
            for args in itertools.product(*pools):
                out.append(schema.ground(args))
        return out


def match_patterns(state: SymbolicState, patterns: Sequence[Fact],
                   binding: Mapping[str, str] | None = None) -> dict[str, str] | None:
    """First binding (in sorted fact order) that makes all patterns hold."""
    binding = dict(binding or {})
    if not patterns:
        return binding
    head, rest = patterns[0].substitute(binding), patterns[1:]
    for fact in state.sorted():
        if fact.name != head.name or len(fact.args) != len(head.args):
            continue
        trial = dict(binding)
        ok = True
        for pat, val in zip(head.args, fact.args):
            if is_var(pat):
                if trial.setdefault(pat, val) != val:
                    ok = False
                    break
            elif pat != val:
                ok = False
                break
        if ok:
            found = match_patterns(state, rest, trial)
            if found is not None:
                return found
    return None
