"""Ordered execution trace, line-delimited JSON persistence and hashing."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

SCHEMA = "trace/1"

EVENT_KINDS = frozenset(
    {
        "plan", "plan_invalid", "action_start", "primitive_exec", "predefined_fix", "perception",
        "correction_push", "correction_generate", "correction_retry", "correction_pop",
        "correction_exhausted", "step_skipped", "task_end",
    }
)


class IncompleteTrace(Exception):
    pass


class TraceFormatError(Exception):
    pass


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    payload: dict
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "payload": self.payload, "wall_time": self.wall_time}

    def canonical(self) -> str:
        # wall_time never takes part in determinism checks
        return json.dumps({"seq": self.seq, "kind": self.kind, "payload": self.payload},
                          sort_keys=True, separators=(",", ":"))


class ExecutionTrace:
    """Append-only event log; optionally mirrored line by line to a stream."""

    def __init__(self, header: dict | None = None, stream: IO[str] | None = None,
                 clock=time.time):
        self.header = dict(header or {})
        self.events: list[TraceEvent] = []
        self._stream = stream
        self._clock = clock
        if stream is not None:
            self._write({"record": "header", "schema": SCHEMA, **self.header})

    def _write(self, record: dict) -> None:
        self._stream.write(json.dumps(record, sort_keys=True) + "\n")
        self._stream.flush()

    def emit(self, kind: str, **payload) -> TraceEvent:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown trace event kind {kind!r}")
        if self.complete:
            raise ValueError("trace already ended")
        event = TraceEvent(len(self.events), kind, payload, self._clock())
        self.events.append(event)
        if self._stream is not None:
            self._write(event.to_dict())
        return event

    # -- queries -------------------------------------------------------------
    @property
    def complete(self) -> bool:
        return bool(self.events) and self.events[-1].kind == "task_end"

    @property
    def end(self) -> TraceEvent:
        if not self.complete:
            raise IncompleteTrace("trace has no task_end event")
        return self.events[-1]

    def of_kind(self, *kinds: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def determinism_hash(self) -> str:
        h = hashlib.sha256()
        for e in self.events:
            h.update(e.canonical().encode())
            h.update(b"\n")
        return h.hexdigest()

    # -- persistence ---------------------------------------------------------
    def lines(self) -> Iterable[str]:
        yield json.dumps({"record": "header", "schema": SCHEMA, **self.header}, sort_keys=True)
        for e in self.events:
            yield json.dumps(e.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, require_complete: bool = True) -> "ExecutionTrace":
        return cls.parse(Path(path).read_text(encoding="utf-8"), require_complete)

    @classmethod
    def parse(cls, text: str, require_complete: bool = True) -> "ExecutionTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise IncompleteTrace("empty trace")
        records = []
        for n, line in enumerate(lines, 1):
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                if n == len(lines):
                    raise IncompleteTrace(f"line {n}: truncated record") from None
                raise TraceFormatError(f"line {n}: not a JSON record") from None
        head = records[0]
        if head.get("record") != "header" or head.get("schema") != SCHEMA:
            raise TraceFormatError(f"missing {SCHEMA} header")
        header = {k: v for k, v in head.items() if k not in ("record", "schema")}
        trace = cls(header)
        for n, rec in enumerate(records[1:], 2):
            try:
                event = TraceEvent(int(rec["seq"]), rec["kind"], dict(rec["payload"]), rec.get("wall_time", 0.0))
            except (KeyError, TypeError, ValueError):
                raise TraceFormatError(f"line {n}: malformed event") from None
            if event.seq != len(trace.events):
                raise TraceFormatError(f"line {n}: sequence gap (seq {event.seq})")
            if event.kind not in EVENT_KINDS:
                raise TraceFormatError(f"line {n}: unknown kind {event.kind!r}")
            if trace.complete:
                raise TraceFormatError(f"line {n}: event after task_end")
            trace.events.append(event)
        if require_complete and not trace.complete:
            raise IncompleteTrace("trace ends before task_end")
        return trace
