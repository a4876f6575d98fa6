"""Declarative fault rules and the seeded injector that fires them."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping

from ..world import DomainError, Fact, SymbolicState

PERSISTENCE = ("transient", "until", "unrecoverable")
LEVELS = ("low", "high")


@dataclass(frozen=True)
class ExecContext:
    """Where a primitive execution sits in the run."""

    step: int
    action: str
    role: str = "plan"  # plan | correction | retry | fix
    attempt: int = 1


@dataclass(frozen=True)
class FaultRule:
    level: str
    message: str
    step: int | None = None
    primitive: str | None = None
    action: str | None = None
    attempt: int | None = None
    role: str | None = None
    args: tuple[str, ...] | None = None
    p: float | None = None
    coverable: bool = False
    persistence: str = "transient"
    until: Fact | None = None
    add: tuple[Fact, ...] = ()
    delete: tuple[Fact, ...] = ()
    obstacle: object = None  # "midpath" or an (x, y) cell
    divert_to: str | None = None
    extra: Mapping[str, object] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.level not in LEVELS:
            raise DomainError(f"fault level must be one of {LEVELS}, got {self.level!r}")
        if self.p is not None and not 0.0 <= self.p <= 1.0:
            raise DomainError(f"fault probability {self.p} outside [0, 1]")
        if self.persistence not in PERSISTENCE:
            raise DomainError(f"unknown persistence {self.persistence!r}")
        if self.persistence == "until" and self.until is None:
            raise DomainError("persistence 'until' needs a predicate")
        if not self.message.strip():
            raise DomainError("fault message must be non-empty")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "FaultRule":
        trig = dict(raw.get("trigger", {}))
        persistence = raw.get("persistence", "transient")
        until = None
        if isinstance(persistence, Mapping):
            until = Fact.parse(persistence["until"])
            persistence = "until"
        effects = raw.get("effects", {})
        obstacle = raw.get("obstacle")
        if isinstance(obstacle, list):
            obstacle = tuple(obstacle)
        args = trig.get("args")
        return cls(
            level=raw.get("level", "low"),
            message=raw.get("message", ""),
            step=trig.get("step"),
            primitive=trig.get("primitive"),
            action=trig.get("action"),
            attempt=trig.get("attempt"),
            role=trig.get("role"),
            args=tuple(args) if args is not None else None,
            p=trig.get("p"),
            coverable=bool(raw.get("coverable", False)),
            persistence=persistence,
            until=until,
            add=tuple(Fact.parse(x) for x in effects.get("add", ())),
            delete=tuple(Fact.parse(x) for x in effects.get("del", ())),
            obstacle=obstacle,
            divert_to=raw.get("divert_to"),
        )

    def matches(self, ctx: ExecContext, prim_name: str, prim_args: tuple[str, ...]) -> bool:
        return (
            (self.step is None or self.step == ctx.step)
            and (self.primitive is None or self.primitive == prim_name)
            and (self.action is None or self.action == ctx.action)
            and (self.attempt is None or self.attempt == ctx.attempt)
            and (self.role is None or self.role == ctx.role)
            and (self.args is None or tuple(self.args) == tuple(prim_args))
        )

    def render(self, **values: object) -> str:
        try:
            return self.message.format(**values)
        except (KeyError, IndexError):
            return self.message


class FaultInjector:
    """Fires at most one rule per primitive execution, first match wins.

    The random stream is advanced exactly once per call to :meth:`inject`
    whether or not a probabilistic rule is involved, so the fault sequence is
    a pure function of the seed and the execution order.
    """

    def __init__(self, rules=(), seed: int = 0):
        self.rules: tuple[FaultRule, ...] = tuple(rules)
        self.seed = seed
        self._rng = random.Random(seed)
        self._spent: set[tuple] = set()
        self.draws = 0

    def inject(self, ctx: ExecContext, prim_name: str, prim_args: tuple[str, ...],
               state: SymbolicState, allowed: bool = True) -> tuple[int, FaultRule] | None:
        u = self._rng.random()
        self.draws += 1
        if not allowed:
            return None
        for index, rule in enumerate(self.rules):
            if not rule.matches(ctx, prim_name, prim_args):
                continue
            if rule.p is not None and not u < rule.p:
                continue
            key = (index, ctx.step, prim_name, tuple(prim_args))
            if rule.persistence == "transient" and key in self._spent:
                continue
            if rule.persistence == "until" and rule.until in state.facts:
                continue
            self._spent.add(key)
            return index, rule
        return None
