"""Ablation benchmark: tasks x arms x iterations, reduced to mean +/- std."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .loader import ConfigError, data_dir, load_scenario
from .metrics import RunMetrics, aggregate, compute_metrics
from .runner import ARMS, run_scenario, scenario_config
from .trace import ExecutionTrace

log = logging.getLogger(__name__)

REPORT_SCHEMA = "suite-report/1"


@dataclass(frozen=True)
class SuiteConfig:
    name: str
    tasks: tuple[str, ...]
    arms: tuple[str, ...] = ("full", "no_llf")
    iterations: int = 2
    base_seed: int = 0
    output_dir: str | None = None
    threshold: int | None = None
    base: str = "."

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        for arm in self.arms:
            if arm not in ARMS:
                raise ValueError(f"unknown arm {arm!r}")

    @classmethod
    def from_dict(cls, doc: dict, base: str | Path = ".") -> "SuiteConfig":
        return cls(
            name=doc.get("name", "suite"),
            tasks=tuple(doc.get("tasks", ())),
            arms=tuple(doc.get("arms", ("full", "no_llf"))),
            iterations=int(doc.get("iterations", 2)),
            base_seed=int(doc.get("base_seed", 0)),
            output_dir=doc.get("output_dir"),
            threshold=doc.get("threshold"),
            base=str(base),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SuiteConfig":
        path = Path(path)
        if not path.exists():
            shipped = data_dir() / "suites" / f"{path.name.removesuffix('.json')}.json"
            if not shipped.exists():
                raise ConfigError(f"suite file not found: {path}", str(path))
            path = shipped
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"unparseable suite file: {exc}", str(path)) from None
        if not isinstance(doc, dict):
            raise ConfigError("suite file must hold a mapping", str(path))
        return cls.from_dict(doc, path.parent)

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        if not p.is_absolute():
            p = Path(self.base) / p
        return p


@dataclass(frozen=True)
class CellResult:
    task: str
    arm: str
    iteration: int
    seed: int
    metrics: RunMetrics | None = None
    error: str | None = None
    trace_hash: str | None = None

    def to_dict(self) -> dict:
        return {
            "task": self.task, "arm": self.arm, "iteration": self.iteration, "seed": self.seed,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "error": self.error, "trace_hash": self.trace_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        m = d.get("metrics")
        return cls(d["task"], d["arm"], d["iteration"], d["seed"],
                   RunMetrics(**m) if m else None, d.get("error"), d.get("trace_hash"))


@dataclass(frozen=True)
class SummaryRow:
    task: str
    arm: str
    n: int
    sr: tuple[float, float]
    exec: tuple[float, float]
    motions: float
    cues: float
    errors: int = 0

    def to_dict(self) -> dict:
        return {"task": self.task, "arm": self.arm, "n": self.n, "sr": list(self.sr),
                "exec": list(self.exec), "motions": self.motions, "cues": self.cues,
                "errors": self.errors}

    @classmethod
    def from_dict(cls, d: dict) -> "SummaryRow":
        return cls(d["task"], d["arm"], d["n"], tuple(d["sr"]), tuple(d["exec"]),
                   d["motions"], d["cues"], d.get("errors", 0))


@dataclass
class SuiteReport:
    name: str
    iterations: int
    arms: tuple[str, ...]
    cells: list[CellResult]
    rows: list[SummaryRow]
    traces: dict = field(default_factory=dict, compare=False, repr=False)

    def row(self, task: str, arm: str) -> SummaryRow:
        for r in self.rows:
            if r.task == task and r.arm == arm:
                return r
        raise KeyError((task, arm))

    @property
    def tasks(self) -> list[str]:
        return list(dict.fromkeys(c.task for c in self.cells))

    @property
    def errored(self) -> list[CellResult]:
        return [c for c in self.cells if c.error]

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA, "name": self.name, "iterations": self.iterations,
            "arms": list(self.arms), "cells": [c.to_dict() for c in self.cells],
            "rows": [r.to_dict() for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"not a {REPORT_SCHEMA} document")
        return cls(d["name"], d["iterations"], tuple(d["arms"]),
                   [CellResult.from_dict(c) for c in d["cells"]],
                   [SummaryRow.from_dict(r) for r in d["rows"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SuiteReport":
        return cls.from_dict(json.loads(text))

    def table(self) -> str:
        head = ["task"]
        for arm in self.arms:
            head += [f"{arm} SR", f"{arm} Exec", f"{arm} |motions|", f"{arm} |cues|"]
        body = []
        for task in self.tasks:
            line = [task]
            for arm in self.arms:
                try:
                    r = self.row(task, arm)
                except KeyError:
                    line += ["-"] * 4
                    continue
                if r.n == 0:
                    line += ["error"] * 4
                    continue
                line += [f"{r.sr[0]:.2f} ± {r.sr[1]:.2f}", f"{r.exec[0]:.2f} ± {r.exec[1]:.2f}",
                         f"{r.motions:.1f}", f"{r.cues:.1f}"]
            body.append(line)
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        fmt = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
        out = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]
        for c in self.errored:
            out.append(f"! {c.task} [{c.arm} #{c.iteration}]: {c.error}")
        return "\n".join(out)


def _run_cell(config: SuiteConfig, ref: str, arm: str, iteration: int):
    seed = config.base_seed + iteration
    name = Path(ref).stem
    try:
        scenario = load_scenario(config.resolve(ref))
        name = scenario.name
        exe = scenario_config(scenario, seed=seed, arm=arm, threshold=config.threshold)
        trace = run_scenario(scenario, exe, extra_header={"arm": arm, "iteration": iteration})
        metrics = compute_metrics(trace)
    except Exception as exc:  # a broken cell must never sink the suite
        log.warning("cell %s/%s/%d failed: %s", name, arm, iteration, exc)
        return CellResult(name, arm, iteration, seed, error=f"{type(exc).__name__}: {exc}"), None
    return CellResult(name, arm, iteration, seed, metrics, trace_hash=trace.determinism_hash()), trace


def _summarize(cells: list[CellResult], arms) -> list[SummaryRow]:
    rows = []
    for task in dict.fromkeys(c.task for c in cells):
        for arm in arms:
            group = [c for c in cells if c.task == task and c.arm == arm]
            good = [c.metrics for c in group if c.metrics is not None]
            errors = len(group) - len(good)
            if not good:
                rows.append(SummaryRow(task, arm, 0, (0.0, 0.0), (0.0, 0.0), 0.0, 0.0, errors))
                continue
            rows.append(SummaryRow(
                task, arm, len(good),
                aggregate(m.sr for m in good), aggregate(m.exec for m in good),
                aggregate(m.motions for m in good)[0], aggregate(m.cues for m in good)[0], errors,
            ))
    return rows


def run_suite(config: SuiteConfig, jobs: int = 1) -> SuiteReport:
    if not config.tasks:
        raise ConfigError("no tasks", config.name)
    jobs_list = [(ref, arm, it) for ref in config.tasks for arm in config.arms
                 for it in range(config.iterations)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda j: _run_cell(config, *j), jobs_list))
    else:
        results = [_run_cell(config, *j) for j in jobs_list]
    cells = [c for c, _ in results]
    traces: dict[tuple, ExecutionTrace] = {
        (c.task, c.arm, c.iteration): t for c, t in results if t is not None
    }
    report = SuiteReport(config.name, config.iterations, tuple(config.arms), cells,
                         _summarize(cells, config.arms), traces)
    if config.output_dir:
        write_outputs(report, Path(config.output_dir))
    return report


def write_outputs(report: SuiteReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.table() + "\n", encoding="utf-8")
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for (task, arm, it), trace in report.traces.items():
        trace.save(tdir / f"{task}.{arm}.{it}.jsonl")
