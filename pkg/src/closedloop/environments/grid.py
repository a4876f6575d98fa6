"""AGV gridworld: landmarks, obstacles and 4-connected shortest-path routing."""

from __future__ import annotations

from collections import deque
from typing import Iterable

from ..world import MovementPrimitive
from .base import PrimitiveResult, SymbolicWorld
from .faults import FaultRule

Cell = tuple[int, int]

# neighbour expansion order fixes tie-breaking between equal-length paths
_MOVES = ((1, 0), (0, 1), (-1, 0), (0, -1))


def route(width: int, height: int, obstacles: Iterable[Cell], start: Cell, goal: Cell) -> list[Cell] | None:
    """Shortest obstacle-free path from ``start`` to ``goal``.

    The returned list holds the cells entered, so its length is the number of
    moves; ``[]`` when ``start == goal`` and ``None`` when the goal is blocked.
    """
    for x, y in (start, goal):
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"cell {(x, y)} outside {width}x{height} grid")
    if start == goal:
        return []
    blocked = set(obstacles)
    if goal in blocked:
        return None
    parent: dict[Cell, Cell] = {start: start}
    frontier = deque([start])
    while frontier:
        cur = frontier.popleft()
        for dx, dy in _MOVES:
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in parent or nxt in blocked:
                continue
            if not (0 <= nxt[0] < width and 0 <= nxt[1] < height):
                continue
            parent[nxt] = cur
            if nxt == goal:
                path = [nxt]
                while parent[path[-1]] != start:
                    path.append(parent[path[-1]])
                return path[::-1]
            frontier.append(nxt)
    return None


class GridWorld(SymbolicWorld):
    """Symbolic landmarks layered over a physical grid.

    Primitives with ``effector == "route"`` physically drive the vehicle to the
    landmark named by their last parameter.
    """

    def __init__(self, domain, state=None, faults=(), seed: int = 0):
        super().__init__(domain, state, faults, seed)
        grid = domain.grid or {}
        self.width = int(grid["width"])
        self.height = int(grid["height"])
        self.obstacles: set[Cell] = {tuple(c) for c in grid.get("obstacles", ())}
        self.agent = grid.get("agent", "agv")
        self.at_predicate = grid.get("at", "at")
        self.visit_predicate = grid.get("visited", "visited")
        self.landmarks: dict[str, Cell] = {
            e.id: tuple(e.attributes["cell"]) for e in domain.entities.values() if e.kind == "landmark"
        }
        if len(set(self.landmarks.values())) != len(self.landmarks):
            raise ValueError("landmarks must occupy distinct cells")
        here = [f.args[1] for f in self.state.facts
                if f.name == self.at_predicate and f.args[0] == self.agent]
        if len(here) != 1:
            raise ValueError(f"{self.agent} must be at exactly one landmark initially")
        self.agv_cell: Cell = self.landmarks[here[0]]
        self._check_cell(self.agv_cell)
        # landmarks reached during the run, in order; initial facts are not visits
        self.visit_log: list[str] = []

    def _check_cell(self, cell: Cell) -> None:
        x, y = cell
        if not (0 <= x < self.width and 0 <= y < self.height) or cell in self.obstacles:
            raise ValueError(f"vehicle cell {cell} out of bounds or on an obstacle")

    def route(self, start: Cell, goal: Cell) -> list[Cell] | None:
        return route(self.width, self.height, self.obstacles, start, goal)

    def _set(self, state) -> None:
        before = self.state.facts
        super()._set(state)
        new = sorted(f.args[0] for f in state.facts - before if f.name == self.visit_predicate)
        self.visit_log.extend(new)

    def _actuate(self, prim: MovementPrimitive, rule: FaultRule | None):
        if prim.effector != "route":
            return None
        target = prim.params[-1]
        if rule is not None and rule.divert_to:
            target = rule.divert_to
        start = self.agv_cell
        goal = self.landmarks[target]
        path = self.route(start, goal)
        info = {"route": {"from": list(start), "to": list(goal), "length": None}}
        if path is None:
            return PrimitiveResult(False, "low", f"no route from {start} to {target}", extra=info)
        info["route"]["length"] = len(path)
        if rule is not None and rule.obstacle is not None and len(path) >= 2:
            if rule.obstacle == "midpath":
                idx = (len(path) - 1) // 2
            else:
                idx = path.index(tuple(rule.obstacle)) if tuple(rule.obstacle) in path else None
            if idx is not None:
                block = path[idx]
                self.obstacles.add(block)
                self.agv_cell = path[idx - 1] if idx > 0 else start
                info["route"]["halted_at"] = list(self.agv_cell)
                info["obstacle"] = list(block)
                info["_fmt"] = {"cell": f"({block[0]},{block[1]})", "x": block[0], "y": block[1]}
                return info
        if rule is not None and rule.level == "low":
            # the drive never started
            return info
        self.agv_cell = goal
        self._check_cell(self.agv_cell)
        return info

