"""Simulated worlds, fault injection and perception."""

from .base import AROUND_MESSAGE, PerceptionReport, PrimitiveResult, SymbolicWorld
from .faults import ExecContext, FaultInjector, FaultRule
from .grid import GridWorld, route
from .tabletop import COOL, WARM, TabletopWorld, warmth

WORLD_TYPES = {"symbolic": SymbolicWorld, "tabletop": TabletopWorld, "grid": GridWorld}


def make_world(domain, state=None, faults=(), seed: int = 0) -> SymbolicWorld:
    try:
        cls = WORLD_TYPES[domain.world]
    except KeyError:
        raise ValueError(f"unknown world type {domain.world!r}") from None
    return cls(domain, state, faults, seed)


__all__ = [
    "AROUND_MESSAGE", "COOL", "ExecContext", "FaultInjector", "FaultRule", "GridWorld",
    "PerceptionReport", "PrimitiveResult", "SymbolicWorld", "TabletopWorld", "WARM",
    "WORLD_TYPES", "make_world", "route", "warmth",
]
