import pytest
from hypothesis import given, settings, strategies as st

from closedloop.environments import (
    ExecContext, FaultInjector, FaultRule, GridWorld, SymbolicWorld, TabletopWorld, make_world, warmth,
)
from closedloop.environments.base import AROUND_MESSAGE, PerceptionReport
from closedloop.environments.grid import route
from closedloop.world import DomainError, SymbolicState, facts
from oracles import grid_distance


def ctx(step=1, role="plan", attempt=1, action="x"):
    return ExecContext(step=step, action=action, role=role, attempt=attempt)


def rule(**kw):
    kw.setdefault("level", "low")
    kw.setdefault("message", "object slipped from gripper")
    return FaultRule(**kw)


# -- fault rules and injector ------------------------------------------------

def test_rule_validation():
    with pytest.raises(DomainError):
        rule(p=1.5)
    with pytest.raises(DomainError):
        rule(message="  ")
    with pytest.raises(DomainError):
        rule(level="medium")
    with pytest.raises(DomainError):
        rule(persistence="until")


def test_rule_from_dict():
    r = FaultRule.from_dict({
        "trigger": {"step": 3, "primitive": "pick", "attempt": 1},
        "level": "low", "coverable": True, "persistence": {"until": "hand_empty(gripper)"},
        "message": "{prim} slipped", "effects": {"add": ["on_table(?b)"], "del": []},
    })
    assert (r.step, r.primitive, r.attempt, r.persistence) == (3, "pick", 1, "until")
    assert str(r.until) == "hand_empty(gripper)"
    assert r.render(prim="pick(block_red)") == "pick(block_red) slipped"


def test_p_zero_never_fires():
    inj = FaultInjector([rule(p=0.0, persistence="unrecoverable")], seed=3)
    assert all(inj.inject(ctx(), "pick", ("b",), SymbolicState()) is None for _ in range(50))


def test_p_one_fires_on_every_pick():
    inj = FaultInjector([rule(p=1.0, primitive="pick", persistence="unrecoverable")], seed=3)
    hits = [inj.inject(ctx(step=i), "pick", ("b",), SymbolicState()) for i in range(20)]
    assert all(h is not None for h in hits)
    assert inj.inject(ctx(), "place_in", ("b", "w"), SymbolicState()) is None


def test_transient_counter_trigger_fires_once():
    inj = FaultInjector([rule(step=3, attempt=1)], seed=0)
    fired = 0
    for step in range(1, 6):
        for attempt in (1, 2, 3):
            fired += inj.inject(ctx(step=step, attempt=attempt), "pick", ("b",), SymbolicState()) is not None
    assert fired == 1


def test_transient_never_refires_same_key():
    inj = FaultInjector([rule(step=2)], seed=0)
    assert inj.inject(ctx(step=2), "pick", ("b",), SymbolicState()) is not None
    assert inj.inject(ctx(step=2, attempt=2), "pick", ("b",), SymbolicState()) is None


def test_until_stops_when_predicate_holds():
    r = FaultRule.from_dict({"level": "low", "message": "m", "persistence": {"until": "path_clear(agv)"}})
    inj = FaultInjector([r], seed=0)
    assert inj.inject(ctx(), "drive", (), SymbolicState()) is not None
    assert inj.inject(ctx(), "drive", (), SymbolicState()) is not None
    assert inj.inject(ctx(), "drive", (), SymbolicState.of("path_clear(agv)")) is None


def test_unrecoverable_always_fires():
    inj = FaultInjector([rule(persistence="unrecoverable", primitive="pick")], seed=0)
    assert all(inj.inject(ctx(attempt=a), "pick", ("b",), SymbolicState()) for a in range(1, 10))


def test_first_matching_rule_wins():
    inj = FaultInjector([rule(primitive="pick", message="first"), rule(message="second")], seed=0)
    index, r = inj.inject(ctx(), "pick", ("b",), SymbolicState())
    assert (index, r.message) == (0, "first")


def test_one_draw_per_execution_regardless_of_rules():
    a = FaultInjector([], seed=11)
    b = FaultInjector([rule(p=0.5, persistence="unrecoverable")], seed=11)
    for i in range(7):
        a.inject(ctx(), "pick", ("b",), SymbolicState(), allowed=i % 2 == 0)
        b.inject(ctx(), "pick", ("b",), SymbolicState())
    assert a.draws == b.draws == 7


def test_probabilistic_faults_are_seed_deterministic():
    def pattern(seed):
        inj = FaultInjector([rule(p=0.4, persistence="unrecoverable")], seed)
        return [inj.inject(ctx(), "pick", ("b",), SymbolicState()) is not None for _ in range(40)]
    assert pattern(5) == pattern(5)
    assert pattern(5) != pattern(6)


# -- execution and perception ------------------------------------------------

def test_pick_without_fault_applies_effects(tabletop):
    w = TabletopWorld(tabletop)
    res = w.execute_primitive(tabletop.primitive("pick", ["block_red"]), ctx())
    assert res.ok and "holding(gripper, block_red)" in w.state


def test_low_fault_suppresses_effects(tabletop):
    w = TabletopWorld(tabletop, faults=[rule(primitive="pick", coverable=True)])
    before = w.state
    res = w.execute_primitive(tabletop.primitive("pick", ["block_red"]), ctx())
    assert not res.ok and res.level == "low" and res.coverable
    assert res.message == "object slipped from gripper"
    assert w.state == before


def test_precondition_failure_is_low_fault(tabletop):
    w = TabletopWorld(tabletop)
    res = w.execute_primitive(tabletop.primitive("place_in", ["block_red", "bowl_red"]), ctx())
    assert not res.ok and not res.coverable
    assert "holding(gripper, block_red)" in res.message


def test_high_offset_fault_and_message(box):
    offset = FaultRule.from_dict({
        "trigger": {"primitive": "release_around"}, "level": "high", "message": "offset",
        "effects": {"add": ["on_floor(?o)", "hand_empty(gripper)"],
                    "del": ["holding(gripper, ?o)", "loaded(gripper)"]},
    })
    w = SymbolicWorld(box, faults=[offset])
    expected = w.state
    for a in ["locate(box)", "pick(box)", "find(cylinder)", "place_around(box, cylinder)"]:
        action = box.parse_action(a)
        expected = box.expected_successor(expected, action)
        for prim in action.primitives:
            assert w.execute_primitive(prim, ctx()).ok
    assert "around(box, cylinder)" not in w.state
    report = w.perceive(expected)
    assert report == PerceptionReport(False, AROUND_MESSAGE, w.state)
    assert report.info == "The box is not close to the cylinder"


def test_perceive_identity(tabletop):
    w = TabletopWorld(tabletop)
    assert w.perceive(w.state).flag is True
    assert w.perceive(w.state).info == ""


def test_perception_report_invariants():
    with pytest.raises(ValueError):
        PerceptionReport(True, "oops", SymbolicState())
    with pytest.raises(ValueError):
        PerceptionReport(False, "", SymbolicState())


def test_perceive_wrong_landmark_message(grid):
    w = GridWorld(grid, SymbolicState.of("at(agv, lm_c)", "path_clear(agv)"))
    report = w.perceive(SymbolicState.of("at(agv, lm_b)", "path_clear(agv)"))
    assert report.info == "vehicle is at landmark C, expected landmark B"


def test_perceive_names_first_differing_fact(tabletop):
    w = TabletopWorld(tabletop, SymbolicState.of("on_table(block_red)", "on_table(block_blue)"))
    report = w.perceive(SymbolicState.of("in(block_red, bowl_green)", "in(block_blue, bowl_red)"))
    # in(block_blue, ...) sorts first and block_blue's partner fact is absent from observed
    assert report.info == "block_blue is not in bowl_red"


def test_hidden_predicates_not_perceived(tabletop):
    from dataclasses import replace
    d = replace(tabletop, hidden=frozenset({"clear"}))
    w = TabletopWorld(d, SymbolicState.of("hand_empty(gripper)"))
    assert w.perceive(SymbolicState.of("hand_empty(gripper)", "clear(bowl_red)")).flag


# -- tabletop -------------------------------------------------------------

def test_warmth():
    assert [warmth(c) for c in ("red", "orange", "yellow")] == ["warm"] * 3
    assert [warmth(c) for c in ("green", "blue", "purple")] == ["cool"] * 3
    with pytest.raises(ValueError):
        warmth("beige")


def test_tabletop_queries(tabletop):
    w = TabletopWorld(tabletop)
    assert list(w.with_warmth("bowl", "cool")) == ["bowl_blue", "bowl_green"]
    assert len(w.blocks) == 5 and len(w.bowls) == 3


def test_make_world_picks_type(tabletop, grid, home):
    assert isinstance(make_world(tabletop), TabletopWorld)
    assert isinstance(make_world(grid), GridWorld)
    assert type(make_world(home)) is SymbolicWorld


# -- grid routing ------------------------------------------------------------

def test_route_open_grid():
    assert len(route(5, 5, (), (0, 0), (4, 4))) == 8


def test_route_with_wall_matches_oracle():
    wall = [(2, y) for y in range(4)]
    got = route(5, 5, wall, (0, 0), (4, 4))
    assert len(got) == grid_distance(5, 5, wall, (0, 0), (4, 4)) == 8
    assert not set(got) & set(wall)


def test_route_identity_and_blocked():
    assert route(3, 3, (), (1, 1), (1, 1)) == []
    assert route(3, 3, [(1, 0), (1, 1), (1, 2)], (0, 0), (2, 2)) is None
    with pytest.raises(ValueError):
        route(3, 3, (), (0, 0), (5, 5))


@settings(max_examples=150, deadline=None)
@given(
    w=st.integers(2, 7), h=st.integers(2, 7), data=st.data(),
)
def test_route_is_optimal(w, h, data):
    cells = [(x, y) for x in range(w) for y in range(h)]
    blocked = data.draw(st.sets(st.sampled_from(cells), max_size=len(cells) // 2))
    start = data.draw(st.sampled_from(cells))
    goal = data.draw(st.sampled_from(cells))
    blocked -= {start}
    path = route(w, h, blocked, start, goal)
    oracle = grid_distance(w, h, blocked, start, goal)
    if oracle is None:
        assert path is None
        return
    assert len(path) == oracle
    prev = start
    for cell in path:
        assert abs(cell[0] - prev[0]) + abs(cell[1] - prev[1]) == 1
        assert cell not in blocked
        prev = cell
    assert prev == goal


def test_obstacle_fault_halts_before_block(grid):
    r = FaultRule.from_dict({"level": "low", "coverable": True, "obstacle": "midpath",
                             "message": "path obstructed at {cell}", "effects": {"del": ["path_clear(agv)"]}})
    w = GridWorld(grid, SymbolicState.of("at(agv, lm_a)", "path_clear(agv)"), faults=[r])
    res = w.execute_primitive(grid.primitive("drive", ["lm_a", "lm_b"]), ctx())
    assert not res.ok and res.coverable
    block = tuple(res.extra["obstacle"])
    assert res.message == f"path obstructed at ({block[0]},{block[1]})"
    assert block in w.obstacles
    assert tuple(res.extra["route"]["halted_at"]) == w.agv_cell
    assert abs(w.agv_cell[0] - block[0]) + abs(w.agv_cell[1] - block[1]) == 1
    assert "path_clear(agv)" not in w.state and "at(agv, lm_a)" in w.state


def test_divert_moves_vehicle_elsewhere(grid):
    r = FaultRule.from_dict({"level": "high", "divert_to": "lm_c", "message": "wrong",
                             "effects": {"del": ["at(agv, ?from)"], "add": ["at(agv, lm_c)"]}})
    w = GridWorld(grid, SymbolicState.of("at(agv, lm_a)", "path_clear(agv)"), faults=[r])
    res = w.execute_primitive(grid.primitive("drive", ["lm_a", "lm_b"]), ctx())
    assert res.ok and res.diverged
    assert w.agv_cell == (0, 4)
    assert w.state.facts == facts("at(agv, lm_c)", "path_clear(agv)")
    assert w.visit_log == []


def test_grid_rejects_bad_start(grid):
    with pytest.raises(ValueError):
        GridWorld(grid, SymbolicState.of("path_clear(agv)"))
