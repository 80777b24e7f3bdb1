"""Interaction trace data model: events, sessions, corpora.

Trace logs are UTF-8 line-delimited JSON records, one event per line, with
fields ``ts`` (integer milliseconds since epoch), ``session``, ``participant``,
``role``, ``expertise``, ``condition``, ``task``, ``action``, ``url`` and the
optional ``target`` and ``payload`` (nested map). Unknown fields are ignored
in lenient mode and rejected in strict mode.

Timestamps are integer milliseconds throughout; configuration durations
elsewhere in the package are float seconds.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from typing import IO, Any, Iterable, Mapping

from .errors import MalformedLine, NonPositiveGap, UnreadableInput

ACTIONS = (
    "navigation",
    "scroll",
    "click",
    "type",
    "select",
    "submit",
    "query",
    "response",
    "push_shareflow",
    "push_knowledge",
    "popup_click",
)
ROLES = ("tutor", "lecturer", "chief_examiner")
EXPERTISE_LEVELS = ("novice", "journeyman", "expert")
OUTCOMES = ("pass", "fail", "unknown")

_FIELD_ORDER = (
    "ts", "session", "participant", "role", "expertise",
    "condition", "task", "action", "url", "target", "payload",
)
_REQUIRED_FIELDS = _FIELD_ORDER[:9]


@dataclass(frozen=True)
class TraceEvent:
    ts: int
    session_id: str
    participant_id: str
    role: str
    expertise: str
    condition: str
    task_id: str
    action: str
    url: str
    target: str | None = None
    payload: Mapping[str, Any] | None = None

    def __post_init__(self):
        if not isinstance(self.ts, int) or self.ts < 0:
            raise ValueError("ts must be a non-negative integer (ms since epoch)")
        if not self.session_id:
            raise ValueError("session id must be non-empty")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.expertise not in EXPERTISE_LEVELS:
            raise ValueError(f"unknown expertise {self.expertise!r}")
        if self.action == "query":
            text = (self.payload or {}).get("text")
            if not text:
                raise ValueError("query events must carry non-empty payload text")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.participant_id, self.task_id, self.condition)


@dataclass(frozen=True)
class Session:
    participant_id: str
    task_id: str
    condition: str
    events: tuple[TraceEvent, ...]
    outcome: str = "unknown"
    order_index: int = 0

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.participant_id, self.task_id, self.condition)


@dataclass(frozen=True)
class ParseDiagnostic:
    line_no: int
    reason: str
    line: str


@dataclass(frozen=True)
class Corpus:
    sessions: tuple[Session, ...]
    source: str = ""
    diagnostics: tuple[ParseDiagnostic, ...] = field(default=(), compare=False)

    def session(self, key: tuple[str, str, str]) -> Session:
        for s in self.sessions:
            if s.key == key:
                return s
        raise KeyError(key)

    def events(self) -> Iterable[TraceEvent]:
        for s in self.sessions:
            yield from s.events


def event_from_record(rec: Mapping[str, Any], strict: bool = False) -> TraceEvent:
    """Build an event from one parsed trace record. Raises ValueError on bad fields."""
    if not isinstance(rec, Mapping):
        raise ValueError("record is not a map")
    missing = [f for f in _REQUIRED_FIELDS if f not in rec]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    if strict:
        unknown = [k for k in rec if k not in _FIELD_ORDER]
        if unknown:
            raise ValueError(f"unknown fields: {', '.join(sorted(unknown))}")
    payload = rec.get("payload")
    if payload is not None and not isinstance(payload, Mapping):
        raise ValueError("payload must be a map")
    target = rec.get("target")
    if target is not None and not isinstance(target, str):
        raise ValueError("target must be a string")
    return TraceEvent(
        ts=rec["ts"],
        session_id=str(rec["session"]),
        participant_id=str(rec["participant"]),
        role=rec["role"],
        expertise=rec["expertise"],
        condition=str(rec["condition"]),
        task_id=str(rec["task"]),
        action=rec["action"],
        url=str(rec["url"]),
        target=target,
        payload=payload,
    )


def event_to_record(ev: TraceEvent) -> dict[str, Any]:
    rec: dict[str, Any] = {
        "ts": ev.ts,
        "session": ev.session_id,
        "participant": ev.participant_id,
        "role": ev.role,
        "expertise": ev.expertise,
        "condition": ev.condition,
        "task": ev.task_id,
        "action": ev.action,
        "url": ev.url,
    }
    if ev.target is not None:
        rec["target"] = ev.target
    if ev.payload is not None:
        rec["payload"] = ev.payload
    return rec


def parse_trace_log(data: bytes | IO[bytes], strict: bool = False,
                    source: str = "") -> Corpus:
    """Parse a line-delimited trace log into a corpus.

    Lenient mode (default) collects malformed lines as diagnostics and keeps
    going; strict mode raises MalformedLine at the first bad line. Events are
    grouped into sessions by (participant, task, condition) and sorted by
    timestamp within each session.
    """
    if hasattr(data, "read"):
        data = data.read()
    if not isinstance(data, (bytes, bytearray)):
        raise UnreadableInput("expected a byte stream")
    if b"\x00" in data:
        raise UnreadableInput("input contains NUL bytes; not line-delimited text")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UnreadableInput(f"input is not UTF-8 text: {exc}") from None

    diagnostics: list[ParseDiagnostic] = []
    groups: dict[tuple[str, str, str], list[TraceEvent]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            rec = json.loads(stripped)
        except json.JSONDecodeError as exc:
            if strict:
                raise MalformedLine(line_no, f"invalid JSON: {exc.msg}")
            diagnostics.append(ParseDiagnostic(line_no, f"invalid JSON: {exc.msg}", stripped))
            continue
        try:
            ev = event_from_record(rec, strict=strict)
        except ValueError as exc:
            if strict:
                raise MalformedLine(line_no, str(exc))
            diagnostics.append(ParseDiagnostic(line_no, str(exc), stripped))
            continue
        groups.setdefault(ev.key, []).append(ev)

    sessions = tuple(
        Session(
            participant_id=key[0],
            task_id=key[1],
            condition=key[2],
            events=tuple(sorted(events, key=lambda e: e.ts)),
        )
        for key, events in groups.items()
    )
    return Corpus(sessions=sessions, source=source, diagnostics=tuple(diagnostics))


def serialize_trace_log(corpus: Corpus) -> bytes:
    """Inverse of parse_trace_log; deterministic bytes for a given corpus."""
    lines = []
    for ev in corpus.events():
        lines.append(json.dumps(event_to_record(ev), sort_keys=False,
                                separators=(",", ":"), ensure_ascii=False))
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


@dataclass(frozen=True)
class Violation:
    kind: str
    session_key: tuple[str, str, str]
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Report invariant violations without mutating the corpus."""
    violations: list[Violation] = []
    seen: set[tuple[str, str, str]] = set()
    for s in corpus.sessions:
        if s.key in seen:
            violations.append(Violation("DuplicateKey", s.key, "session key appears more than once"))
        seen.add(s.key)
        if not s.events:
            violations.append(Violation("EmptySession", s.key, "session has no events"))
        prev = None
        for ev in s.events:
            if prev is not None and ev.ts < prev:
                violations.append(Violation(
                    "NonMonotoneTimestamp", s.key,
                    f"ts {ev.ts} after {prev}"))
            prev = ev.ts
            if ev.key != s.key:
                violations.append(Violation(
                    "KeyMismatch", s.key,
                    f"event key {ev.key} differs from session key"))
    return ValidationReport(tuple(violations))


def segment_sessions(corpus: Corpus, max_gap: float) -> Corpus:
    """Split sessions at silent gaps longer than max_gap (seconds).

    The first segment keeps the original key; later segments get a ``#k``
    suffix on the task id, so the operation is idempotent.
    """
    if max_gap <= 0:
        raise NonPositiveGap(f"max_gap must be positive, got {max_gap}")
    gap_ms = max_gap * 1000.0
    out: list[Session] = []
    for s in corpus.sessions:
        if len(s.events) < 2:
            out.append(s)
            continue
        segments: list[list[TraceEvent]] = [[s.events[0]]]
        for prev, ev in zip(s.events, s.events[1:]):
            if ev.ts - prev.ts > gap_ms:
                segments.append([])
            segments[-1].append(ev)
        if len(segments) == 1:
            out.append(s)
            continue
        for i, seg in enumerate(segments, start=1):
            task = s.task_id if i == 1 else f"{s.task_id}#{i}"
            events = tuple(
                ev if ev.task_id == task else replace(ev, task_id=task)
                for ev in seg
            )
            out.append(replace(s, task_id=task, events=events))
    return Corpus(sessions=tuple(out), source=corpus.source,
                  diagnostics=corpus.diagnostics)
