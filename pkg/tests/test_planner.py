import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import pytest

from closedloop.loader import parse_domain
from closedloop.planner import (
    PROTOCOL, InvalidRemoteCorrection, InvalidRemotePlan, NoCorrectionRule, NoPlanFound, OraclePlanner,
    PlannerKind, PlannerTimeout, PlannerTransport, RemotePlanner, SchemaViolation, ScriptedPlanner,
    assemble_prompt, make_planner,
)
from closedloop.world import Goal, SymbolicState, Task, satisfies
from oracles import primitive_search


def fold(domain, state, plan):
    for a in plan:
        state = domain.expected_successor(state, a)
    return state


def test_box_plan(box):
    plan = OraclePlanner(box).plan(box.initial_state, box.tasks["box_around_cylinder"])
    assert [str(a) for a in plan] == ["locate(box)", "pick(box)", "find(cylinder)", "place_around(box, cylinder)"]


def test_goal_already_holds(tabletop):
    task = Task("nothing to do", Goal.of(["hand_empty(gripper)"]))
    assert OraclePlanner(tabletop).plan(tabletop.initial_state, task) == []


def test_no_plan_found(tabletop):
    task = Task("impossible", Goal.of(["in(block_red, bowl_red)", "on_table(block_red)"]))
    with pytest.raises(NoPlanFound):
        OraclePlanner(tabletop, depth_cap=3).plan(tabletop.initial_state, task)


def test_step_by_step_plan_is_minimal_against_primitive_search(tabletop):
    from closedloop.loader import data_dir
    doc = json.loads((data_dir() / "domains" / "tabletop.json").read_text())
    task = tabletop.tasks["step_by_step"]
    plan = OraclePlanner(tabletop).plan(tabletop.initial_state, task)
    assert {a.name for a in plan} <= {"pick_up", "place"}
    assert satisfies(fold(tabletop, tabletop.initial_state, plan), task.goal)
    optimum = primitive_search(doc, doc["initial_state"], [str(f) for f in task.goal.required], depth=8)
    assert optimum == 4
    assert sum(len(a.primitives) for a in plan) == optimum


@pytest.mark.parametrize("domain_name", ["tabletop", "home", "box", "grid"])
def test_oracle_plans_satisfy_every_bundled_task(domain_name, request):
    domain = request.getfixturevalue(domain_name)
    oracle = OraclePlanner(domain)
    for task in domain.tasks.values():
        start = task.initial_state or domain.initial_state
        plan = oracle.plan(start, task)
        assert satisfies(fold(domain, start, plan), task.goal), task.id
        assert [str(a) for a in oracle.plan(start, task)] == [str(a) for a in plan]


def test_correction_sofa(home):
    state = SymbolicState.of("at(agent, living_room)", "holding(agent, chips)")
    sit = home.parse_action("sit(sofa)")
    prompt = assemble_prompt(state, "agent not at sofa", [(sit, "agent not at sofa")])
    got = OraclePlanner(home).correct(state, prompt)
    assert got.name == "find" and got.params[-1] == "sofa"


def test_correction_box_offset(box):
    state = SymbolicState.of("hand_empty(gripper)", "on_floor(box)", "located(box)", "near(gripper, cylinder)")
    place = box.parse_action("place_around(box, cylinder)")
    prompt = assemble_prompt(state, "The box is not close to the cylinder", [(place, "The box is not close to the cylinder")])
    assert str(OraclePlanner(box).correct(state, prompt)) == "pick(box)"


def test_correction_without_violation_uses_recovery(tabletop):
    put = tabletop.parse_action("put(block_red, bowl_green)")
    prompt = assemble_prompt(tabletop.initial_state, "pick slipped", [(put, "pick slipped")])
    assert str(OraclePlanner(tabletop).correct(tabletop.initial_state, prompt)) == "home(gripper)"


def test_correction_subplan_first_step(home):
    # at(agent, sofa) from the kitchen is one walk away, but eat needs holding chips first
    state = SymbolicState.of("at(agent, living_room)", "item_at(chips, kitchen)", "hand_free(agent)")
    eat = home.parse_action("eat(chips)")
    got = OraclePlanner(home).correct(state, assemble_prompt(state, "x", [(eat, "x")]))
    assert str(got) == "find(living_room, kitchen)"


THREE = {
    "name": "three",
    "entities": {"agent": "agent", "box": "box"},
    "predicates": {"a": 1, "b": 1, "c": 1},
    "primitives": {
        "make_a": {"params": ["?x:box"], "add": ["a(?x)"]},
        "make_b": {"params": ["?x:box"], "pre": ["a(?x)"], "add": ["b(?x)"]},
        "make_c": {"params": ["?x:box"], "pre": ["b(?x)"], "add": ["c(?x)"]},
    },
    "actions": {
        "do_a": {"params": ["?x:box"], "steps": ["make_a(?x)"]},
        "do_b": {"params": ["?x:box"], "steps": ["make_b(?x)"]},
        "do_c": {"params": ["?x:box"], "steps": ["make_c(?x)"]},
    },
}


@pytest.mark.parametrize("missing", ["b(box)", "a(box)"])
def test_unique_establisher_matches_exhaustive_scan(missing):
    d = parse_domain(THREE)
    state = SymbolicState.of("a(box)") if missing == "b(box)" else SymbolicState()
    target = d.parse_action("do_c(box)") if missing == "b(box)" else d.parse_action("do_b(box)")
    establishers = [p for p in d.ground_primitives() if any(str(f) == missing for f in p.add_effects)]
    assert len(establishers) == 1
    got = OraclePlanner(d).correct(state, assemble_prompt(state, "failed", [(target, "failed")]))
    assert [str(p) for p in got.primitives] == [str(establishers[0])]


def test_no_correction_rule(tabletop):
    state = tabletop.initial_state
    # nothing is violated and the domain offers no recovery
    from dataclasses import replace
    d = replace(tabletop, recovery=None)
    put = d.parse_action("put(block_red, bowl_green)")
    with pytest.raises(NoCorrectionRule):
        OraclePlanner(d).correct(state, assemble_prompt(state, "x", [(put, "x")]))


# -- prompts -----------------------------------------------------------------

def test_prompt_without_history_or_error():
    b = assemble_prompt(SymbolicState.of("b(x)", "a(x)"))
    assert b.history == () and b.error_info == ""
    text = b.render()
    assert text.startswith(b.predefined_preamble)
    assert "Error:" not in text and "a(x)\nb(x)" in text


def test_prompt_history_in_push_order(tabletop):
    a1 = tabletop.parse_action("put(block_red, bowl_green)")
    a2 = tabletop.parse_action("home(gripper)")
    b = assemble_prompt(SymbolicState(), "second", [(a1, "first"), (a2, "second")])
    text = b.render()
    assert text.index("put(block_red, bowl_green): first") < text.index("home(gripper): second")
    assert b.error_info == "second"


def test_prompt_rendering_is_canonical():
    a = assemble_prompt(SymbolicState.of("z(a)", "a(b)", "m(c)"))
    b = assemble_prompt(SymbolicState.of("m(c)", "z(a)", "a(b)"))
    assert a.current_state_rendering == b.current_state_rendering == "a(b)\nm(c)\nz(a)"


# -- scripted ----------------------------------------------------------------

def test_scripted_planner(home):
    task = home.tasks["sofa_snack"]
    sp = ScriptedPlanner(home, {"sofa_snack": ["find(living_room, kitchen)"]},
                         [("not at sofa", "find(living_room, sofa)")])
    assert [str(a) for a in sp.plan(home.initial_state, task)] == ["find(living_room, kitchen)"]
    got = sp.correct(SymbolicState(), assemble_prompt(SymbolicState(), "Agent is NOT AT SOFA"))
    assert str(got) == "find(living_room, sofa)"
    with pytest.raises(NoCorrectionRule):
        sp.correct(SymbolicState(), assemble_prompt(SymbolicState(), "something else"))
    with pytest.raises(NoPlanFound):
        sp.plan(home.initial_state, Task("other", Goal(), id="other"))


# -- planner kinds -------------------------------------------------------------

def test_planner_kind_parse():
    assert PlannerKind.parse("oracle") == PlannerKind("oracle")
    k = PlannerKind.parse("remote=http://localhost:9000")
    assert k.endpoint == "http://localhost:9000" and str(k) == "remote=http://localhost:9000"
    for bad in ("remote", "remote=ftp://x", "genius"):
        with pytest.raises(ValueError):
            PlannerKind.parse(bad)


def test_make_planner(tabletop):
    assert isinstance(make_planner("oracle", tabletop), OraclePlanner)
    with pytest.raises(ValueError):
        make_planner("scripted", tabletop)


# -- remote ------------------------------------------------------------------

def mock(handler, domain, token="secret"):
    return RemotePlanner("http://planner.test", domain, token=token, transport=httpx.MockTransport(handler))


def test_remote_plan_happy_path(box):
    seen = {}

    def handler(request):
        seen["path"] = request.url.path
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"protocol": PROTOCOL, "actions": [
            {"name": "locate", "params": ["box"]}, {"name": "pick", "params": ["box"]}]})

    plan = mock(handler, box).plan(box.initial_state, box.tasks["box_around_cylinder"])
    assert [str(a) for a in plan] == ["locate(box)", "pick(box)"]
    assert seen["path"] == "/plan" and seen["auth"] == "Bearer secret"
    body = seen["body"]
    assert body["protocol"] == PROTOCOL and body["task"] == "Place a box around a cylinder"
    assert body["state_facts"] == box.initial_state.literals()
    assert {a["name"] for a in body["action_schema"]} == set(box.actions)


def test_remote_token_from_environment(box, monkeypatch):
    monkeypatch.setenv("HICRISP_REMOTE_TOKEN", "from-env")
    got = {}

    def handler(request):
        got["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"actions": []})

    RemotePlanner("http://p.test", box, transport=httpx.MockTransport(handler)).plan(
        box.initial_state, box.tasks["box_around_cylinder"])
    assert got["auth"] == "Bearer from-env"


def test_remote_correct_happy_path(box):
    def handler(request):
        body = json.loads(request.content)
        assert request.url.path == "/correct"
        assert body["error_info"] == "The box is not close to the cylinder"
        assert body["history"][0]["action"]["name"] == "place_around"
        return httpx.Response(200, json={"actions": [{"name": "pick", "params": ["box"]}]})

    place = box.parse_action("place_around(box, cylinder)")
    prompt = assemble_prompt(box.initial_state, "The box is not close to the cylinder",
                             [(place, "The box is not close to the cylinder")])
    assert str(mock(handler, box).correct(box.initial_state, prompt)) == "pick(box)"


def test_remote_unknown_action_is_schema_violation(box):
    def handler(request):
        return httpx.Response(200, json={"actions": [{"name": "fly_to", "params": ["box"]}]})

    with pytest.raises(InvalidRemotePlan) as err:
        mock(handler, box).plan(box.initial_state, box.tasks["box_around_cylinder"])
    assert err.value.action_name == "fly_to"
    with pytest.raises(InvalidRemoteCorrection):
        mock(handler, box).correct(box.initial_state, assemble_prompt(box.initial_state, "x"))


def test_remote_correction_must_be_single(box):
    def handler(request):
        return httpx.Response(200, json={"actions": [{"name": "pick", "params": ["box"]}] * 2})

    with pytest.raises(InvalidRemoteCorrection):
        mock(handler, box).correct(box.initial_state, assemble_prompt(box.initial_state, "x"))


@pytest.mark.parametrize("response,error", [
    (httpx.Response(500, text="boom"), PlannerTransport),
    (httpx.Response(200, text="not json"), SchemaViolation),
    (httpx.Response(200, json={"plan": []}), SchemaViolation),
    (httpx.Response(200, json={"protocol": "other/9", "actions": []}), SchemaViolation),
    (httpx.Response(200, json={"actions": [{"name": "pick", "params": "box"}]}), SchemaViolation),
])
def test_remote_bad_responses(box, response, error):
    with pytest.raises(error):
        mock(lambda request: response, box).plan(box.initial_state, box.tasks["box_around_cylinder"])


def test_remote_connection_refused(box):
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    with pytest.raises(PlannerTransport):
        mock(handler, box).plan(box.initial_state, box.tasks["box_around_cylinder"])


class _Slow(BaseHTTPRequestHandler):
    def do_POST(self):
        time.sleep(1.0)
        try:
            self.send_response(200)
            self.end_headers()
            self.wfile.write(b'{"actions": []}')
        except OSError:
            pass

    def log_message(self, *args):
        pass


def test_remote_timeout_against_live_server(box):
    server = HTTPServer(("127.0.0.1", 0), _Slow)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        planner = RemotePlanner(f"http://127.0.0.1:{server.server_port}", box, timeout=0.2)
        with pytest.raises(PlannerTimeout):
            planner.plan(box.initial_state, box.tasks["box_around_cylinder"])
        planner.close()
    finally:
        server.shutdown()
        server.server_close()
