"""Maps raw event subsequences to knowledge-management sub-process codes.

Fourteen codes across four process families (access, store, share, apply).
Coding is a greedy left-to-right scan: at each position the longest matching
action pattern wins and its events are consumed, so coded spans never share
an event index. Push events are paired with the first later popup click that
falls inside the interaction window; an unpaired push codes as the
no-interaction variant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .trace import Corpus, Session, TraceEvent


class KMCode(str, Enum):
    AP1_SearchExplore = "AP1_SearchExplore"
    AP2_SwitchTabs = "AP2_SwitchTabs"
    AP3_ReadEngage = "AP3_ReadEngage"
    AP4_OpenInteract = "AP4_OpenInteract"
    SP1_TypeInteract = "SP1_TypeInteract"
    SP2_SelectType = "SP2_SelectType"
    SP3_TypeDriven = "SP3_TypeDriven"
    SP4_OpenType = "SP4_OpenType"
    ShP1_ShareResource = "ShP1_ShareResource"
    SFPush_WithInteraction = "SFPush_WithInteraction"
    SFPush_NoInteraction = "SFPush_NoInteraction"
    KPush_WithInteraction = "KPush_WithInteraction"
    KPush_NoInteraction = "KPush_NoInteraction"
    Querying = "Querying"

    @property
    def family(self) -> str:
        name = self.name
        if name.startswith("AP") or name == "Querying":
            return "access"
        if name.startswith("SP"):
            return "store"
        if name.startswith("ShP"):
            return "share"
        return "apply"


ALL_CODES: tuple[KMCode, ...] = tuple(KMCode)

# Constraint tags used by the matcher.
DISTINCT_URLS = "distinct_urls"
SAME_URL_DWELL = "same_url_dwell"
PAIRED_WITHIN_WINDOW = "paired_within_window"
UNPAIRED = "unpaired"
NO_CONSTRAINT = ""


@dataclass(frozen=True)
class CodePattern:
    code: KMCode
    actions: tuple[str, ...]
    constraint: str = NO_CONSTRAINT


def pattern_table() -> list[CodePattern]:
    """Canonical action pattern per code, one row per code."""
    return [
        CodePattern(KMCode.AP1_SearchExplore, ("navigation", "scroll", "click", "navigation")),
        CodePattern(KMCode.AP2_SwitchTabs, ("navigation", "navigation", "navigation"), DISTINCT_URLS),
        CodePattern(KMCode.AP3_ReadEngage, ("click", "click"), SAME_URL_DWELL),
        CodePattern(KMCode.AP4_OpenInteract, ("navigation", "click")),
        CodePattern(KMCode.SP1_TypeInteract, ("click", "click", "click", "click", "type")),
        CodePattern(KMCode.SP2_SelectType, ("select", "type")),
        CodePattern(KMCode.SP3_TypeDriven, ("type", "type"), SAME_URL_DWELL),
        CodePattern(KMCode.SP4_OpenType, ("navigation", "click", "type")),
        CodePattern(KMCode.ShP1_ShareResource, ("submit",)),
        CodePattern(KMCode.SFPush_WithInteraction, ("push_shareflow", "popup_click"), PAIRED_WITHIN_WINDOW),
        CodePattern(KMCode.SFPush_NoInteraction, ("push_shareflow",), UNPAIRED),
        CodePattern(KMCode.KPush_WithInteraction, ("push_knowledge", "popup_click"), PAIRED_WITHIN_WINDOW),
        CodePattern(KMCode.KPush_NoInteraction, ("push_knowledge",), UNPAIRED),
        CodePattern(KMCode.Querying, ("query",)),
    ]


# Scan-time patterns, excluding the push pairs (handled by window pairing) and
# including the two-event query+response form of Querying.
_SCAN_PATTERNS: tuple[CodePattern, ...] = tuple(sorted(
    [
        CodePattern(KMCode.SP1_TypeInteract, ("click", "click", "click", "click", "type")),
        CodePattern(KMCode.AP1_SearchExplore, ("navigation", "scroll", "click", "navigation")),
        CodePattern(KMCode.AP2_SwitchTabs, ("navigation", "navigation", "navigation"), DISTINCT_URLS),
        CodePattern(KMCode.SP4_OpenType, ("navigation", "click", "type")),
        CodePattern(KMCode.AP3_ReadEngage, ("click", "click"), SAME_URL_DWELL),
        CodePattern(KMCode.AP4_OpenInteract, ("navigation", "click")),
        CodePattern(KMCode.SP2_SelectType, ("select", "type")),
        CodePattern(KMCode.SP3_TypeDriven, ("type", "type"), SAME_URL_DWELL),
        CodePattern(KMCode.Querying, ("query", "response")),
        CodePattern(KMCode.ShP1_ShareResource, ("submit",)),
        CodePattern(KMCode.Querying, ("query",)),
    ],
    key=lambda p: -len(p.actions),
))

_PUSH_VARIANTS = {
    "push_shareflow": (KMCode.SFPush_WithInteraction, KMCode.SFPush_NoInteraction),
    "push_knowledge": (KMCode.KPush_WithInteraction, KMCode.KPush_NoInteraction),
}


@dataclass(frozen=True)
class CoderConfig:
    """Durations are seconds. dwell_threshold gates the "for a period of
    time" codes; interaction_window pairs a push with its popup click."""
    dwell_threshold: float = 5.0
    interaction_window: float = 30.0
    precedence: tuple[KMCode, ...] | None = None

    def __post_init__(self):
        if self.dwell_threshold <= 0 or self.interaction_window <= 0:
            raise ValueError("durations must be positive")
        if self.precedence is not None:
            missing = set(ALL_CODES) - set(self.precedence)
            if missing:
                raise ValueError(f"precedence must cover all 14 codes; missing {sorted(c.value for c in missing)}")


@dataclass(frozen=True)
class CodedLine:
    unit_key: tuple[str, str, str]            # participant, task, condition
    conversation_key: tuple[str, str]         # condition/system, task
    line_index: int
    code: KMCode
    span: tuple[int, int]                     # first/last event index in session
    ts: int


@dataclass(frozen=True)
class CodingResult:
    lines: tuple[CodedLine, ...]
    residual: int
    residual_indices: tuple[int, ...]


def _ordered_patterns(cfg: CoderConfig) -> tuple[CodePattern, ...]:
    if cfg.precedence is None:
        return _SCAN_PATTERNS
    rank = {code: i for i, code in enumerate(cfg.precedence)}
    return tuple(sorted(_SCAN_PATTERNS, key=lambda p: (rank[p.code], -len(p.actions))))


def _constraint_ok(pattern: CodePattern, events: Sequence[TraceEvent], cfg: CoderConfig) -> bool:
    if pattern.constraint == DISTINCT_URLS:
        urls = [e.url for e in events]
        return len(set(urls)) == len(urls)
    if pattern.constraint == SAME_URL_DWELL:
        if events[0].url != events[-1].url:
            return False
        return events[-1].ts - events[0].ts >= cfg.dwell_threshold * 1000.0
    return True


def code_session_detailed(session: Session, cfg: CoderConfig | None = None) -> CodingResult:
    """Greedy longest-match coding of one session.

    Events that match no pattern are skipped and counted in the residual
    tally. Push events look ahead (stopping at the next push of the same
    kind) for the first unconsumed popup click inside the interaction
    window.
    """
    cfg = cfg or CoderConfig()
    events = session.events
    n = len(events)
    consumed = [False] * n
    patterns = _ordered_patterns(cfg)
    lines: list[CodedLine] = []
    residual: list[int] = []
    conversation = (session.condition, session.task_id)

    def emit(code: KMCode, first: int, last: int) -> None:
        lines.append(CodedLine(
            unit_key=session.key,
            conversation_key=conversation,
            line_index=len(lines),
            code=code,
            span=(first, last),
            ts=events[first].ts,
        ))

    for i in range(n):
        if consumed[i]:
            continue
        ev = events[i]
        if ev.action in _PUSH_VARIANTS:
            with_code, no_code = _PUSH_VARIANTS[ev.action]
            limit = ev.ts + cfg.interaction_window * 1000.0
            paired = None
            for j in range(i + 1, n):
                if consumed[j]:
                    continue
                other = events[j]
                if other.ts > limit:
                    break
                if other.action in _PUSH_VARIANTS:
                    break  # a later push owns later clicks
                if other.action == "popup_click":
                    paired = j
                    break
            if paired is not None:
                consumed[i] = consumed[paired] = True
                emit(with_code, i, paired)
            else:
                consumed[i] = True
                emit(no_code, i, i)
            continue

        matched = False
        for pattern in patterns:
            span_idx = [i]
            j = i + 1
            while len(span_idx) < len(pattern.actions) and j < n:
                if not consumed[j]:
                    span_idx.append(j)
                j += 1
            if len(span_idx) < len(pattern.actions):
                continue
            window = [events[k] for k in span_idx]
            if any(e.action != a for e, a in zip(window, pattern.actions)):
                continue
            if not _constraint_ok(pattern, window, cfg):
                continue
            for k in span_idx:
                consumed[k] = True
            emit(pattern.code, span_idx[0], span_idx[-1])
            matched = True
            break
        if not matched:
            residual.append(i)

    return CodingResult(tuple(lines), len(residual), tuple(residual))


def code_session(session: Session, cfg: CoderConfig | None = None) -> list[CodedLine]:
    return list(code_session_detailed(session, cfg).lines)


def code_corpus(corpus: Corpus, cfg: CoderConfig | None = None) -> list[CodedLine]:
    """Code every session, re-indexing lines per conversation.

    Sessions are processed in corpus order, so output is a pure function of
    (corpus, cfg).
    """
    cfg = cfg or CoderConfig()
    out: list[CodedLine] = []
    counters: dict[tuple[str, str], int] = {}
    for session in corpus.sessions:
        for line in code_session_detailed(session, cfg).lines:
            idx = counters.get(line.conversation_key, 0)
            counters[line.conversation_key] = idx + 1
            out.append(CodedLine(
                unit_key=line.unit_key,
                conversation_key=line.conversation_key,
                line_index=idx,
                code=line.code,
                span=line.span,
                ts=line.ts,
            ))
    return out


def coded_lines_to_jsonl(lines: Iterable[CodedLine]) -> bytes:
    rows = []
    for ln in lines:
        rows.append(json.dumps({
            "unit": list(ln.unit_key),
            "conversation": list(ln.conversation_key),
            "line_index": ln.line_index,
            "code": ln.code.value,
            "ts": ln.ts,
        }, separators=(",", ":")))
    return ("\n".join(rows) + ("\n" if rows else "")).encode("utf-8")
