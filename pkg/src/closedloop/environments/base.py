"""Generic symbolic environment: executes primitives and perceives state."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..world import Domain, Fact, MovementPrimitive, SymbolicState
from .faults import ExecContext, FaultInjector, FaultRule

# Canonical wording for a misplaced box; kept verbatim for the box-around-cylinder scene.
AROUND_MESSAGE = "The box is not close to the cylinder"
_HARDWIRED = {Fact("around", ("box", "cylinder")): AROUND_MESSAGE}

DEFAULT_MESSAGES = {
    "missing": "expected {fact} to hold",
    "unexpected": "{fact} holds but was not expected",
}


@dataclass(frozen=True)
class PrimitiveResult:
    ok: bool
    level: str | None = None
    message: str = ""
    coverable: bool = False
    rule: int | None = None
    diverged: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        out: dict = {"ok": self.ok}
        if not self.ok:
            out.update(level=self.level, message=self.message, coverable=self.coverable)
        if self.rule is not None:
            out["rule"] = self.rule
        if self.diverged:
            out["diverged"] = True
        out.update(self.extra)
        return out


@dataclass(frozen=True)
class PerceptionReport:
    flag: bool
    info: str
    observed: SymbolicState

    def __post_init__(self) -> None:
        if self.flag and self.info:
            raise ValueError("a successful perception carries no info")
        if not self.flag and not self.info:
            raise ValueError("a failed perception must explain itself")


class SymbolicWorld:
    """Deterministic world whose ground truth is a :class:`SymbolicState`."""

    def __init__(self, domain: Domain, state: SymbolicState | None = None,
                 faults=(), seed: int = 0):
        self.domain = domain
        self._state = domain.initial_state if state is None else state
        problems = domain.functional_violations(self._state)
        if problems:
            raise ValueError("initial state breaks invariants: " + "; ".join(problems))
        self.injector = faults if isinstance(faults, FaultInjector) else FaultInjector(faults, seed)

    @property
    def state(self) -> SymbolicState:
        return self._state

    # -- execution ---------------------------------------------------------
    def execute_primitive(self, prim: MovementPrimitive, ctx: ExecContext) -> PrimitiveResult:
        violations = self.domain.check_preconditions(self._state, prim)
        hit = self.injector.inject(ctx, prim.name, prim.params, self._state, allowed=not violations)
        if violations:
            missing = ", ".join(str(v) for v in violations)
            return PrimitiveResult(False, "low", f"cannot execute {prim}: {missing} does not hold")
        if hit is None:
            extra = self._actuate(prim, None)
            if isinstance(extra, PrimitiveResult):
                return extra
            self._set(self.domain.apply_effects(self._state, prim))
            return PrimitiveResult(True, extra=extra or {})
        index, rule = hit
        return self._fault(prim, index, rule)

    def _fault(self, prim: MovementPrimitive, index: int, rule: FaultRule) -> PrimitiveResult:
        extra = self._actuate(prim, rule) or {}
        if isinstance(extra, PrimitiveResult):
            return extra
        binding = prim.binding
        add = [f.substitute(binding) for f in rule.add]
        delete = [f.substitute(binding) for f in rule.delete]
        if add or delete:
            self._set(self.domain.apply_raw(self._state, add, delete, context=f"fault on {prim}"))
        values = dict(prim=str(prim), name=prim.name, args=prim.params, **extra.pop("_fmt", {}))
        message = rule.render(**values)
        if rule.level == "high":
            return PrimitiveResult(True, rule=index, diverged=True, extra=extra)
        return PrimitiveResult(False, "low", message, coverable=rule.coverable, rule=index, extra=extra)

    def _actuate(self, prim: MovementPrimitive, rule: FaultRule | None):
        """Hook for physical side effects; may return trace extras or a failure."""
        return None

    def _set(self, state: SymbolicState) -> None:
        self._state = state

    # -- perception --------------------------------------------------------
    def perceive(self, expected: SymbolicState) -> PerceptionReport:
        visible = self.domain.perceivable
        observed = self._state.restrict(visible)
        wanted = expected.restrict(visible)
        if observed == wanted:
            return PerceptionReport(True, "", self._state)
        diff = sorted(observed ^ wanted)
        return PerceptionReport(False, self.describe(diff[0], observed, wanted), self._state)

    def describe(self, fact: Fact, observed: frozenset[Fact], expected: frozenset[Fact]) -> str:
        missing = fact in expected
        if missing and fact in _HARDWIRED:
            return _HARDWIRED[fact]
        templates = {**DEFAULT_MESSAGES, **self.domain.messages.get(fact.name, {})}
        values = {"fact": str(fact)}
        partner = self._partner(fact, observed if missing else expected)
        exp, obs = (fact, partner) if missing else (partner, fact)
        if partner is not None and "mismatch" in templates:
            values.update(self._labels("exp", exp))
            values.update(self._labels("obs", obs))
            return templates["mismatch"].format(**values)
        values.update(self._labels("a", fact))
        return templates["missing" if missing else "unexpected"].format(**values)

    def _partner(self, fact: Fact, pool: frozenset[Fact]) -> Fact | None:
        key_pos = self.domain.functional.get(fact.name)
        if key_pos is None:
            return None
        key = tuple(fact.args[i] for i in key_pos)
        for other in sorted(pool):
            if other.name == fact.name and tuple(other.args[i] for i in key_pos) == key:
                return other
        return None

    def _labels(self, prefix: str, fact: Fact) -> dict[str, str]:
        out = {}
        for i, arg in enumerate(fact.args):
            ent = self.domain.entities.get(arg)
            out[f"{prefix}{i}"] = ent.label if ent else arg
        return out
