"""Command-line entry point: run, bench, replay and validate-domain."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import SuiteConfig, run_suite, write_outputs
from .loader import ConfigError, load_domain, load_scenario, validate_domain
from .metrics import compute_metrics
from .planner import PlannerKind, PlannerUnavailable
from .runner import rerun, run_scenario, scenario_config, scenario_or_domain
from .trace import ExecutionTrace, IncompleteTrace, TraceFormatError
from .world import WorldModelError

log = logging.getLogger("closedloop")

EXIT_OK, EXIT_ERROR, EXIT_TASK_FAILED, EXIT_HASH_MISMATCH = 0, 1, 2, 3


class HashMismatch(Exception):
    pass


def _threshold(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("threshold must be >= 1")
    return value


def _planner(text: str) -> str:
    try:
        return str(PlannerKind.parse(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="closedloop", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one task")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario file")
    src.add_argument("--domain", help="domain file or shipped domain name")
    run.add_argument("--task", help="task id within the domain")
    run.add_argument("--planner", type=_planner, help="oracle, scripted or remote=<url>")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--threshold", type=_threshold)
    run.add_argument("--no-correction", action="store_true")
    run.add_argument("--no-llf", action="store_true", help="disable low-level feedback")
    run.add_argument("--on-exhaustion", choices=("abort_task", "skip_step"))
    run.add_argument("--trace-out", help="write the trace here (JSON lines)")

    bench = sub.add_parser("bench", help="run a benchmark suite")
    bench.add_argument("suite", help="suite config file or shipped suite name")
    bench.add_argument("--report-out", help="output directory for report and traces")
    bench.add_argument("--iterations", type=int)
    bench.add_argument("--seed", type=int, help="base seed")
    bench.add_argument("--threshold", type=_threshold)
    bench.add_argument("--jobs", type=int, default=1)

    replay = sub.add_parser("replay", help="recompute metrics and check determinism")
    replay.add_argument("trace")

    val = sub.add_parser("validate-domain", help="check a domain or scenario file")
    val.add_argument("path")
    return parser


def cmd_run(args) -> int:
    scenario = scenario_or_domain(args.scenario, args.domain, args.task)
    config = scenario_config(
        scenario, seed=args.seed, threshold=args.threshold, on_exhaustion=args.on_exhaustion,
        correction_enabled=False if args.no_correction else None,
        low_level_feedback_enabled=False if args.no_llf else None,
    )
    stream = open(args.trace_out, "w", encoding="utf-8") if args.trace_out else None
    try:
        trace = run_scenario(scenario, config, args.planner, stream=stream)
    except PlannerUnavailable as exc:
        print(f"error: planner unavailable: {exc}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        if stream is not None:
            stream.close()
    m = compute_metrics(trace)
    print(f"task {scenario.task.id}: status={trace.end.payload['status']} "
          f"SR={m.sr} Exec={m.exec:.2f} motions={m.motions} cues={m.cues}")
    if args.trace_out:
        print(f"trace written to {args.trace_out}")
    return EXIT_OK if m.sr == 1 else EXIT_TASK_FAILED


def cmd_bench(args) -> int:
    config = SuiteConfig.load(args.suite)
    changes = {}
    if args.iterations is not None:
        changes["iterations"] = args.iterations
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.threshold is not None:
        changes["threshold"] = args.threshold
    if changes:
        config = SuiteConfig(**{**config.__dict__, **changes})
    if not config.tasks:
        print("error: no tasks", file=sys.stderr)
        return EXIT_ERROR
    report = run_suite(SuiteConfig(**{**config.__dict__, "output_dir": None}), jobs=max(1, args.jobs))
    out = args.report_out or config.output_dir
    if out:
        write_outputs(report, Path(out))
    print(report.table())
    if out:
        print(f"report written to {out}")
    return EXIT_OK


def replay_trace(path: str | Path) -> tuple[ExecutionTrace, ExecutionTrace]:
    original = ExecutionTrace.load(path)
    again = rerun(original.header)
    if again.determinism_hash() != original.determinism_hash():
        raise HashMismatch(f"{path}: re-execution diverges from the recorded trace")
    return original, again


def cmd_replay(args) -> int:
    original = ExecutionTrace.load(args.trace)
    m = compute_metrics(original)
    print(f"recorded: SR={m.sr} Exec={m.exec:.2f} motions={m.motions} cues={m.cues}")
    try:
        replay_trace(args.trace)
    except HashMismatch as exc:
        print(f"error: hash mismatch: {exc}", file=sys.stderr)
        return EXIT_HASH_MISMATCH
    print(f"replay ok: {original.determinism_hash()}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8")) if path.suffix == ".json" and path.exists() else None
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and "domain" in doc and "primitives" not in doc:
        scenario = load_scenario(path)
        report = validate_domain(scenario.domain)
        label = f"scenario {scenario.name}"
    else:
        domain = load_domain(args.path)
        report = validate_domain(domain)
        label = f"domain {domain.name}"
    for w in report.warnings:
        print(f"warning: {w}")
    for e in report.errors:
        print(f"error: {e}", file=sys.stderr)
    if report.ok:
        print(f"{label}: ok")
        return EXIT_OK
    return EXIT_ERROR


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "replay": cmd_replay, "validate-domain": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, WorldModelError, IncompleteTrace, TraceFormatError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
