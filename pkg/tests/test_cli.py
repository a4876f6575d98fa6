import json

import pytest

from closedloop.cli import EXIT_ERROR, EXIT_HASH_MISMATCH, EXIT_OK, EXIT_TASK_FAILED, main
from conftest import scenario_path


def test_run_domain_task(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    code = main(["run", "--domain", "tabletop", "--task", "store_two_blocks", "--planner", "oracle",
                 "--seed", "7", "--trace-out", str(out)])
    assert code == EXIT_OK
    assert "SR=1" in capsys.readouterr().out
    header = json.loads(out.read_text().splitlines()[0])
    assert header["seed"] == 7 and header["task"] == "store_two_blocks"


def test_run_sofa_without_correction_fails():
    assert main(["run", "--scenario", str(scenario_path("sofa"))]) == EXIT_OK
    assert main(["run", "--scenario", str(scenario_path("sofa")), "--no-correction"]) == EXIT_TASK_FAILED


def test_run_missing_domain(capsys):
    assert main(["run", "--domain", "/nope/domain.json"]) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


def test_run_bad_arguments():
    with pytest.raises(SystemExit):
        main(["run", "--domain", "tabletop", "--threshold", "0"])
    with pytest.raises(SystemExit):
        main(["run", "--domain", "tabletop", "--planner", "psychic"])
    with pytest.raises(SystemExit):
        main(["run", "--domain", "tabletop", "--scenario", "x.json"])


def test_run_remote_unreachable(capsys):
    code = main(["run", "--domain", "box", "--planner", "remote=http://127.0.0.1:9"])
    assert code == EXIT_ERROR
    assert "planner unavailable" in capsys.readouterr().err


def test_bench_writes_report(tmp_path, capsys):
    assert main(["bench", "tabletop_ablation", "--iterations", "1", "--report-out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["iterations"] == 1 and len(doc["rows"]) == 14
    assert "report written" in capsys.readouterr().out


def test_bench_empty_suite(tmp_path, capsys):
    p = tmp_path / "empty.json"
    p.write_text(json.dumps({"name": "empty", "tasks": []}))
    assert main(["bench", str(p)]) == EXIT_ERROR
    assert "no tasks" in capsys.readouterr().err


@pytest.fixture
def trace_file(tmp_path):
    out = tmp_path / "sofa.jsonl"
    assert main(["run", "--scenario", str(scenario_path("sofa")), "--trace-out", str(out)]) == EXIT_OK
    return out


def test_replay_ok(trace_file, capsys):
    assert main(["replay", str(trace_file)]) == EXIT_OK
    assert "replay ok" in capsys.readouterr().out


def test_replay_truncated(trace_file):
    lines = trace_file.read_text().splitlines()
    trace_file.write_text("\n".join(lines[:-1]) + "\n")
    assert main(["replay", str(trace_file)]) == EXIT_ERROR


def test_replay_tampered(trace_file, capsys):
    lines = trace_file.read_text().splitlines()
    for i, line in enumerate(lines):
        rec = json.loads(line)
        if rec.get("kind") == "correction_generate":
            rec["payload"]["psi"] = "edited by hand"
            lines[i] = json.dumps(rec)
    trace_file.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(trace_file)]) == EXIT_HASH_MISMATCH
    assert "hash mismatch" in capsys.readouterr().err


def test_validate_domain(tmp_path, capsys):
    assert main(["validate-domain", "tabletop"]) == EXIT_OK
    assert main(["validate-domain", str(scenario_path("obstacle"))]) == EXIT_OK
    out = capsys.readouterr().out
    assert "domain tabletop: ok" in out and "scenario grid_obstacle: ok" in out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "name": "bad", "entities": {"a": "block"}, "predicates": {"p": 1},
        "primitives": {"x": {"params": ["?b"], "pre": ["p(?c)"], "add": ["p(?b)"]}},
        "actions": {"y": {"params": ["?b"], "steps": ["x(?b)"]}},
    }))
    assert main(["validate-domain", str(bad)]) == EXIT_ERROR
    assert "unbound variable ?c" in capsys.readouterr().err
