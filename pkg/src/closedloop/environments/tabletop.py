"""Blocks-and-bowls tabletop world."""

from __future__ import annotations

from ..world import Entity
from .base import SymbolicWorld

COLORS = ("red", "orange", "yellow", "green", "blue", "purple")
WARM = frozenset({"red", "orange", "yellow"})
COOL = frozenset({"green", "blue", "purple"})


def warmth(color: str) -> str:
    if color in WARM:
        return "warm"
    if color in COOL:
        return "cool"
    raise ValueError(f"unknown color {color!r}; expected one of {COLORS}")


class TabletopWorld(SymbolicWorld):

    def __init__(self, domain, state=None, faults=(), seed: int = 0):
        super().__init__(domain, state, faults, seed)
        for ent in self.blocks + self.bowls:
            color = ent.attributes.get("color")
            if color is None:
                raise ValueError(f"{ent.id} has no color")
            warmth(str(color))
        grippers = self._of_kind("gripper")
        if len(grippers) != 1:
            raise ValueError(f"tabletop needs exactly one gripper, found {len(grippers)}")
        self.gripper = grippers[0]

    def _of_kind(self, kind: str) -> list[Entity]:
        return sorted((e for e in self.domain.entities.values() if e.kind == kind), key=lambda e: e.id)

    @property
    def blocks(self) -> list[Entity]:
        return self._of_kind("block")

    @property
    def bowls(self) -> list[Entity]:
        return self._of_kind("bowl")

    def with_warmth(self, kind: str, which: str) -> list[str]:
        return [e.id for e in self._of_kind(kind) if warmth(str(e.attributes["color"])) == which]
