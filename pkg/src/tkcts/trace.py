"""Append-only JSONL run trace and deterministic replay.

One JSON object per line: ``{"seq", "kind", "payload", "wall_time"}``. The
first event is ``run_header`` (carrying ``schema_version``, the task and the
full config) and the last is ``stop``. ``llm_call`` events store complete
response texts and ``execution`` events complete reports, so a run can be
replayed without network access or re-running programs.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from tkcts.errors import DivergenceError, TkctsError

SCHEMA_VERSION = 1

EVENT_KINDS = (
    "run_header",
    "llm_call",
    "execution",
    "verdict",
    "rating_update",
    "prune",
    "expand",
    "final_selection",
    "stop",
)

# Fields that legitimately differ between otherwise identical runs.
VOLATILE_KEYS = ("wall_time",)
VOLATILE_PAYLOAD_KEYS = ("elapsed_seconds", "wall_seconds")

_CODE_FENCE = re.compile(r"```([^\n`]*)\n.*?```", re.DOTALL)


def code_hash(code: str) -> str:
    return hashlib.sha256(code.encode()).hexdigest()[:16]


@dataclass
class TraceEvent:
    seq: int
    kind: str
    payload: dict[str, Any]
    wall_time: float = 0.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "kind": self.kind, "payload": self.payload, "wall_time": self.wall_time},
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> TraceEvent:
        data = json.loads(line)
        return cls(seq=data["seq"], kind=data["kind"], payload=data["payload"], wall_time=data.get("wall_time", 0.0))

    def comparable(self) -> dict[str, Any]:
        """The event without wall-clock fields, for determinism checks."""
        return {"seq": self.seq, "kind": self.kind, "payload": _strip_volatile(self.payload)}


def _strip_volatile(value):
    if isinstance(value, dict):
        return {k: _strip_volatile(v) for k, v in value.items() if k not in VOLATILE_PAYLOAD_KEYS}
    if isinstance(value, list):
        return [_strip_volatile(v) for v in value]
    return value


def redact_event(event: TraceEvent) -> TraceEvent:
    payload = dict(event.payload)
    if event.kind == "llm_call":
        payload["response"] = _CODE_FENCE.sub("```\n[redacted]\n```", payload.get("response", ""))
    elif event.kind == "run_header":
        payload["redacted"] = True
    return TraceEvent(event.seq, event.kind, payload, event.wall_time)


class JsonlSink:
    """Writes and flushes one line per event. I/O errors propagate and abort the run."""

    def __init__(self, path: str | Path, redact: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.redact = redact
        self._fh = self.path.open("w", encoding="utf-8")

    def write(self, event: TraceEvent) -> None:
        if self.redact:
            event = redact_event(event)
        self._fh.write(event.to_json() + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


class CheckingSink:
    """Compares each new event against a recorded trace; raises on the first mismatch."""

    def __init__(self, recorded: list[TraceEvent]):
        self.recorded = recorded
        self.position = 0

    def write(self, event: TraceEvent) -> None:
        if self.position >= len(self.recorded):
            raise DivergenceError(event.seq, f"replay emitted extra {event.kind!r} event")
        expected = self.recorded[self.position]
        self.position += 1
        if event.kind == "run_header":
            # The header is rebuilt from the recording itself.
            return
        if event.comparable() != expected.comparable():
            raise DivergenceError(expected.seq, f"expected {expected.kind!r} event differs from replay ({event.kind!r})")

    def close(self) -> None:
        pass


class Tracer:
    def __init__(self, sinks: Iterable = (), keep: bool = True, clock: Callable[[], float] = time.time):
        self.sinks = list(sinks)
        self.keep = keep
        self.clock = clock
        self.events: list[TraceEvent] = []
        self.seq = 0

    def emit(self, kind: str, payload: dict[str, Any]) -> int:
        event = TraceEvent(self.seq, kind, payload, self.clock())
        self.seq += 1
        if self.keep:
            self.events.append(event)
        for sink in self.sinks:
            sink.write(event)
        return event.seq

    def close(self) -> None:
        for sink in self.sinks:
            sink.close()


@dataclass
class TraceLog:
    events: list[TraceEvent] = field(default_factory=list)
    truncated: bool = False

    @property
    def last_complete(self) -> TraceEvent | None:
        return self.events[-1] if self.events else None

    @property
    def header(self) -> dict[str, Any]:
        if not self.events or self.events[0].kind != "run_header":
            raise TkctsError("trace does not start with a run_header event")
        return self.events[0].payload

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]


def read_trace(path: str | Path) -> TraceLog:
    """Parse a trace; a damaged final line (e.g. after a crash) sets ``truncated``."""
    log = TraceLog()
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    for idx, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            log.events.append(TraceEvent.from_json(line))
        except (json.JSONDecodeError, KeyError, ValueError):
            if any(rest.strip() for rest in lines[idx + 1:]):
                raise TkctsError(f"corrupt trace line {idx + 1} in {path}")
            log.truncated = True
            break
    if log.events and log.events[-1].kind != "stop":
        log.truncated = True
    return log


def check_invariants(events: list[TraceEvent]) -> list[str]:
    """Structural problems in a complete trace (empty list when sound)."""
    problems = []
    if not events or events[0].kind != "run_header":
        problems.append("first event is not run_header")
    if not events or events[-1].kind != "stop":
        problems.append("last event is not stop")
    for prev, cur in zip(events, events[1:]):
        if cur.seq <= prev.seq:
            problems.append(f"seq not increasing at {cur.seq}")
    verdicts = {e.seq for e in events if e.kind == "verdict"}
    refs: dict[int, int] = {}
    for e in events:
        if e.kind == "rating_update":
            ref = e.payload.get("verdict_seq")
            refs[ref] = refs.get(ref, 0) + 1
    for seq in sorted(verdicts):
        if refs.get(seq, 0) != 1:
            problems.append(f"verdict {seq} has {refs.get(seq, 0)} rating_update events")
    return problems


class TraceProvider:
    """Serves recorded ``llm_call`` responses, checking each request hash."""

    def __init__(self, events: list[TraceEvent]):
        self.calls = [e for e in events if e.kind == "llm_call"]
        self.index = 0

    def complete(self, req):
        from tkcts.llm import ChatResponse, Usage

        if self.index >= len(self.calls):
            raise DivergenceError(-1, f"replay requested an llm call beyond the {len(self.calls)} recorded")
        event = self.calls[self.index]
        self.index += 1
        if req.request_hash() != event.payload["request_hash"]:
            raise DivergenceError(event.seq, "request hash differs from the recorded llm_call")
        usage = event.payload.get("usage", {})
        return ChatResponse(
            text=event.payload["response"],
            usage=Usage(usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)),
            model_echo=event.payload.get("model_echo", req.model),
        )


class TraceExecutor:
    """Serves recorded execution reports instead of running programs again."""

    def __init__(self, events: list[TraceEvent]):
        self.runs = [e for e in events if e.kind == "execution"]
        self.index = 0

    def run(self, node_id: int, code: str):
        from tkcts.execution import ExecutionReport

        if self.index >= len(self.runs):
            raise DivergenceError(-1, "replay executed more programs than recorded")
        event = self.runs[self.index]
        self.index += 1
        if event.payload["node_id"] != node_id or event.payload["code_hash"] != code_hash(code):
            raise DivergenceError(event.seq, f"execution of node {node_id} does not match the recording")
        return ExecutionReport.from_dict(event.payload["report"])


def replay(trace_path: str | Path, out_path: str | Path | None = None):
    """Re-run a recorded search from its trace and verify it reproduces event for event.

    Returns the new :class:`~tkcts.engine.SearchOutcome`. Raises
    :class:`DivergenceError` naming the first recorded ``seq`` that differs.
    """
    from tkcts.core import SearchConfig, TaskSpec
    from tkcts.engine import SearchDeps, run_search
    from tkcts.judge import make_comparator
    from tkcts.llm import parse_price_table
    from tkcts.prompts import TemplateSet

    log = read_trace(trace_path)
    if log.truncated:
        raise TkctsError(f"trace {trace_path} is truncated; cannot replay")
    header = log.header
    if header.get("schema_version") != SCHEMA_VERSION:
        raise TkctsError(f"unsupported trace schema {header.get('schema_version')!r}")
    if header.get("redacted"):
        raise TkctsError("redacted traces cannot be replayed")
    task = TaskSpec.from_dict(header["task"])
    cfg = SearchConfig.from_dict(header["config"])
    prices = header.get("price_table")
    templates_dir = header.get("templates_dir")
    checker = CheckingSink(log.events)
    sinks: list = [checker]
    if out_path is not None:
        sinks.append(JsonlSink(out_path))
    tracer = Tracer(sinks)
    deps = SearchDeps(
        provider=TraceProvider(log.events),
        executor=TraceExecutor(log.events),
        comparator=make_comparator(cfg.comparator_kind, task.rubric),
        templates=TemplateSet(templates_dir) if templates_dir else None,
        price_table=parse_price_table(prices) if prices is not None else None,
        tracer=tracer,
    )
    try:
        outcome = run_search(task, cfg, deps)
    finally:
        tracer.close()
    if checker.position != len(log.events):
        missing = log.events[checker.position]
        raise DivergenceError(missing.seq, "replay stopped before the recorded trace ended")
    return outcome
