"""Glue between scenario files and the engine, shared by bench, CLI and replay."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import IO

from .engine import Engine, ExecutorConfig
from .environments import make_world
from .loader import Scenario, load_domain, load_scenario, task_for
from .planner import PlannerKind, make_planner
from .trace import ExecutionTrace

ARMS = {
    "full": {"correction_enabled": True, "low_level_feedback_enabled": True},
    "no_llf": {"correction_enabled": True, "low_level_feedback_enabled": False},
    "no_correction": {"correction_enabled": False, "low_level_feedback_enabled": True},
}

_CONFIG_KEYS = ("threshold", "correction_enabled", "low_level_feedback_enabled", "on_exhaustion")


def scenario_config(scenario: Scenario, seed: int = 0, arm: str | None = None, **overrides) -> ExecutorConfig:
    """Scenario defaults, then arm flags, then explicit (non-None) overrides."""
    values = {k: scenario.config[k] for k in _CONFIG_KEYS if k in scenario.config}
    if arm is not None:
        if arm not in ARMS:
            raise ValueError(f"unknown arm {arm!r}; expected one of {sorted(ARMS)}")
        values.update(ARMS[arm])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExecutorConfig(seed=seed, **values)


def domain_scenario(domain_ref: str, task_id: str | None = None) -> Scenario:
    """A fault-free scenario over a bare domain and one of its tasks."""
    domain = load_domain(domain_ref)
    task = task_for(domain, task_id)
    return Scenario(name=f"{domain.name}:{task.id}", domain=domain, task=task, path="")


def run_scenario(scenario: Scenario, config: ExecutorConfig, planner: str | None = None,
                 stream: IO[str] | None = None, extra_header: dict | None = None) -> ExecutionTrace:
    kind = PlannerKind.parse(planner) if planner else PlannerKind.parse(scenario.planner.get("kind", "oracle"))
    script = scenario.planner if kind.kind == "scripted" else None
    header = {
        "scenario": str(Path(scenario.path).resolve()) if scenario.path else "",
        "domain": "" if scenario.path else scenario.domain.source,
        "task": scenario.task.id,
        "seed": config.seed,
        "config": config.to_dict(),
        "planner": str(kind),
    }
    header.update(extra_header or {})
    world = make_world(scenario.domain, scenario.initial_state, scenario.faults, config.seed)
    agent = make_planner(kind, scenario.domain, scenario.task, script)
    engine = Engine(scenario.task, world, agent, config, ExecutionTrace(header, stream))
    try:
        return engine.run()
    finally:
        close = getattr(agent, "close", None)
        if close is not None:
            close()


def rerun(header: dict) -> ExecutionTrace:
    """Re-execute the run described by a trace header."""
    if header.get("scenario"):
        scenario = load_scenario(header["scenario"])
    elif header.get("domain"):
        scenario = domain_scenario(header["domain"], header.get("task"))
    else:
        raise ValueError("trace header names neither a scenario nor a domain")
    cfg = dict(header.get("config", {}))
    cfg.pop("seed", None)
    config = replace(ExecutorConfig(**cfg), seed=int(header.get("seed", 0)))
    extra = {k: v for k, v in header.items() if k not in ("scenario", "domain", "task", "seed", "config", "planner")}
    return run_scenario(scenario, config, header.get("planner"), extra_header=extra)


def scenario_or_domain(scenario: str | Path | None, domain: str | None, task: str | None) -> Scenario:
    if scenario:
        return load_scenario(scenario)
    if domain:
        return domain_scenario(domain, task)
    raise ValueError("either a scenario or a domain is required")
