"""Context detection and push recommendation policy.

A session's event prefix yields a context descriptor (active page, weighted
page terms, recent KM codes). Guides are matched by blending workflow
position (how far the recent codes walk the guide's coded step prefix) with
page-term overlap, 50/50. Pushes are gated by a minimum score, a per-payload
cooldown, and a cap on concurrently active deliveries; suppressed candidates
are kept with their reason so the history endpoint can resurface them instead
of re-pushing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .coding import CoderConfig, code_session
from .errors import EmptyPrefix, NoQuery, UnknownRecommendation
from .repository import STOPWORDS, KnowledgeIndex, SearchResult, search, tokenize
from .shareflow import ShareFlow
from .trace import Corpus, Session, TraceEvent

REC_STATUSES = ("queued", "delivered", "interacted", "expired", "suppressed")


@dataclass(frozen=True)
class ContextDescriptor:
    session_key: tuple[str, str, str]
    active_url: str
    page_terms: Mapping[str, float]
    recent_codes: tuple[str, ...]
    candidate_tasks: tuple[str, ...] = ()


@dataclass(frozen=True)
class PushPolicyConfig:
    """cooldown is seconds per (session, payload)."""
    min_score: float = 0.5
    cooldown: float = 600.0
    max_active: int = 2
    resurface_enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.min_score <= 1.0:
            raise ValueError("min_score must be in [0, 1]")
        if self.cooldown <= 0:
            raise ValueError("cooldown must be positive")


@dataclass
class Recommendation:
    id: str
    kind: str                       # shareflow_push | knowledge_push
    payload: str | tuple[SearchResult, ...]
    score: float
    issued_ts: int
    status: str = "queued"
    session_id: str = ""
    delivered_ts: int | None = None
    resolved_ts: int | None = None
    suppress_reason: str | None = None

    def payload_key(self) -> str:
        if isinstance(self.payload, str):
            return f"shareflow:{self.payload}"
        return "knowledge:" + "|".join(r.doc_id for r in self.payload)


_TRANSITIONS = {
    "queued": {"delivered"},
    "delivered": {"interacted", "expired"},
    "interacted": set(),
    "expired": set(),
    "suppressed": set(),
}


def _transition(rec: Recommendation, status: str, ts: int | None = None) -> None:
    if status not in _TRANSITIONS[rec.status]:
        raise ValueError(f"illegal status transition {rec.status} -> {status}")
    rec.status = status
    if status == "delivered":
        rec.delivered_ts = ts
    elif status in ("interacted", "expired"):
        rec.resolved_ts = ts


def detect_context(prefix: Sequence[TraceEvent], coder: CoderConfig | None = None,
                   n_recent: int = 10,
                   task_descriptors: Mapping[str, Sequence[str]] | None = None,
                   ) -> ContextDescriptor:
    """Summarize a session prefix: last url, page terms on it, recent codes."""
    if not prefix:
        raise EmptyPrefix("context detection needs at least one event")
    coder = coder or CoderConfig()
    last = prefix[-1]
    active_url = last.url

    page_terms: dict[str, float] = {}
    for ev in prefix:
        if ev.url != active_url or not ev.payload:
            continue
        terms = ev.payload.get("terms")
        if not isinstance(terms, Mapping):
            continue
        for term, weight in terms.items():
            w = float(weight)
            if w < 0:
                raise ValueError("page term weights must be >= 0")
            page_terms[term] = page_terms.get(term, 0.0) + w

    session = Session(
        participant_id=last.participant_id,
        task_id=last.task_id,
        condition=last.condition,
        events=tuple(prefix),
    )
    codes = tuple(line.code.value for line in code_session(session, coder))
    recent = codes[-n_recent:]

    candidates: tuple[str, ...] = ()
    if task_descriptors:
        scored = []
        for task_id, terms in task_descriptors.items():
            overlap = sum(page_terms.get(t, 0.0) for t in set(terms))
            scored.append((-overlap, task_id))
        scored.sort()
        candidates = tuple(task for negoverlap, task in scored if -negoverlap > 0)

    return ContextDescriptor(
        session_key=last.key,
        active_url=active_url,
        page_terms=page_terms,
        recent_codes=recent,
        candidate_tasks=candidates,
    )


QuerySynthesizer = Callable[[Mapping[str, float], int], str]


def synthesize_query(page_terms: Mapping[str, float], limit: int) -> str:
    """Deterministic query synthesis: top terms by weight, stopwords out.

    A generative synthesizer with the same signature can be plugged in
    instead.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    usable = [(term, w) for term, w in page_terms.items()
              if term and term.lower() not in STOPWORDS]
    if not usable:
        raise NoQuery("no usable page terms")
    usable.sort(key=lambda tw: (-tw[1], tw[0]))
    return " ".join(term for term, _ in usable[:limit])


@dataclass(frozen=True)
class Candidate:
    flow_id: str
    score: float


def _flow_terms(flow: ShareFlow) -> frozenset[str]:
    terms: set[str] = set(tokenize(flow.title))
    for step in flow.steps:
        terms.update(tokenize(step.caption))
    return frozenset(terms)


def match_shareflows(ctx: ContextDescriptor, library: Sequence[ShareFlow]) -> list[Candidate]:
    """Rank guides by 0.5*workflow-prefix + 0.5*page-term overlap.

    Prefix score: longest common prefix of the context's recent codes against
    the guide's coded step labels, divided by the guide's code count. Term
    score: fraction of context term weight covered by the guide's title and
    caption vocabulary.
    """
    total_weight = sum(ctx.page_terms.values())
    out = []
    for flow in library:
        prefix_score = 0.0
        if flow.coded_labels:
            lcp = 0
            for a, b in zip(ctx.recent_codes, flow.coded_labels):
                if a != b:
                    break
                lcp += 1
            prefix_score = lcp / len(flow.coded_labels)
        term_score = 0.0
        if total_weight > 0:
            vocabulary = _flow_terms(flow)
            covered = sum(w for t, w in ctx.page_terms.items()
                          if t.lower() in vocabulary)
            term_score = covered / total_weight
        out.append(Candidate(flow_id=flow.id, score=0.5 * prefix_score + 0.5 * term_score))
    out.sort(key=lambda c: (-c.score, c.flow_id))
    return out


def decide_push(candidates: Sequence[Candidate],
                history: Sequence[Recommendation],
                policy: PushPolicyConfig,
                now_ts: int,
                session_id: str = "",
                kind: str = "shareflow_push",
                id_prefix: str = "rec") -> list[Recommendation]:
    """Apply the push policy; returns queued and suppressed recommendations."""
    cooldown_ms = policy.cooldown * 1000.0
    active = sum(1 for r in history if r.status in ("queued", "delivered"))
    seq = len(history)
    out: list[Recommendation] = []

    def payload_key(c: Candidate) -> str:
        return f"shareflow:{c.flow_id}" if kind == "shareflow_push" else c.flow_id

    recent = {}
    for r in history:
        if r.status != "suppressed":
            key = r.payload_key()
            recent[key] = max(recent.get(key, 0), r.issued_ts)

    for cand in candidates:
        rec = Recommendation(
            id=f"{id_prefix}{seq}",
            kind=kind,
            payload=cand.flow_id,
            score=cand.score,
            issued_ts=now_ts,
            session_id=session_id,
        )
        seq += 1
        if cand.score < policy.min_score:
            rec.status = "suppressed"
            rec.suppress_reason = "below_min_score"
        elif payload_key(cand) in recent and now_ts - recent[payload_key(cand)] < cooldown_ms:
            rec.status = "suppressed"
            rec.suppress_reason = "cooldown"
        elif active >= policy.max_active:
            rec.status = "suppressed"
            rec.suppress_reason = "max_active"
        else:
            active += 1
        out.append(rec)
    return out


class PushEngine:
    """Replays event streams into a deterministic push log.

    One state slot per session id: the growing event prefix and the session's
    recommendation history (queued, delivered, resolved and suppressed). The
    same event stream with the same policy always produces the same log.
    """

    def __init__(self, library: Sequence[ShareFlow],
                 policy: PushPolicyConfig | None = None,
                 coder: CoderConfig | None = None,
                 index: KnowledgeIndex | None = None,
                 task_descriptors: Mapping[str, Sequence[str]] | None = None,
                 query_limit: int = 5,
                 knowledge_k: int = 3,
                 synthesizer: QuerySynthesizer = synthesize_query):
        self.library = list(library)
        self._by_id = {f.id: f for f in self.library}
        self.policy = policy or PushPolicyConfig()
        self.coder = coder or CoderConfig()
        self.index = index
        self.task_descriptors = task_descriptors
        self.query_limit = query_limit
        self.knowledge_k = knowledge_k
        self.synthesizer = synthesizer
        self._events: dict[str, list[TraceEvent]] = {}
        self._recs: dict[str, list[Recommendation]] = {}
        self._pushed_events: dict[str, list[TraceEvent]] = {}

    # -- bookkeeping ------------------------------------------------------

    def _session_recs(self, session_id: str) -> list[Recommendation]:
        return self._recs.setdefault(session_id, [])

    def _find(self, rec_id: str) -> Recommendation:
        for recs in self._recs.values():
            for r in recs:
                if r.id == rec_id:
                    return r
        raise UnknownRecommendation(rec_id)

    def _expire_stale(self, session_id: str, now_ts: int) -> None:
        window_ms = self.coder.interaction_window * 1000.0
        for r in self._session_recs(session_id):
            if r.status == "delivered" and now_ts > r.delivered_ts + window_ms:
                _transition(r, "expired", r.delivered_ts + int(window_ms))

    # -- public API -------------------------------------------------------

    def process_event(self, ev: TraceEvent) -> list[Recommendation]:
        """Feed one event; returns recommendations delivered at this step."""
        sid = ev.session_id
        prefix = self._events.setdefault(sid, [])
        prefix.append(ev)
        self._expire_stale(sid, ev.ts)

        if ev.action == "popup_click":
            self._ack_latest(sid, ev.ts)

        history = self._session_recs(sid)
        delivered: list[Recommendation] = []

        ctx = detect_context(prefix, self.coder, task_descriptors=self.task_descriptors)
        # Zero-score candidates are not worth a log entry at every event.
        candidates = [c for c in match_shareflows(ctx, self.library) if c.score > 0.0]
        decisions = decide_push(candidates, history, self.policy, ev.ts,
                                session_id=sid, kind="shareflow_push",
                                id_prefix=f"{sid}:r")
        history.extend(decisions)
        for rec in decisions:
            if rec.status == "queued":
                _transition(rec, "delivered", ev.ts)
                delivered.append(rec)
                self._record_push_event(ev, "push_shareflow",
                                        {"recommendation": rec.id,
                                         "shareflow": rec.payload})

        if self.index is not None and len(self.index) > 0:
            try:
                query = self.synthesizer(ctx.page_terms, self.query_limit)
            except NoQuery:
                query = None
            if query:
                results = tuple(search(self.index, query, self.knowledge_k))
                if results:
                    top = results[0].score
                    score = top / (1.0 + top)  # squash into [0, 1)
                    rec = Recommendation(
                        id=f"{sid}:r{len(history)}",
                        kind="knowledge_push",
                        payload=results,
                        score=score,
                        issued_ts=ev.ts,
                        session_id=sid,
                    )
                    key = rec.payload_key()
                    cooldown_ms = self.policy.cooldown * 1000.0
                    recent = [r for r in history
                              if r.status != "suppressed" and r.payload_key() == key
                              and ev.ts - r.issued_ts < cooldown_ms]
                    active = sum(1 for r in history if r.status in ("queued", "delivered"))
                    if score < self.policy.min_score:
                        rec.status = "suppressed"
                        rec.suppress_reason = "below_min_score"
                    elif recent:
                        rec.status = "suppressed"
                        rec.suppress_reason = "cooldown"
                    elif active >= self.policy.max_active:
                        rec.status = "suppressed"
                        rec.suppress_reason = "max_active"
                    history.append(rec)
                    if rec.status == "queued":
                        _transition(rec, "delivered", ev.ts)
                        delivered.append(rec)
                        self._record_push_event(ev, "push_knowledge",
                                                {"recommendation": rec.id,
                                                 "docs": [r.doc_id for r in results]})
        return delivered

    def _ack_latest(self, session_id: str, ts: int) -> None:
        window_ms = self.coder.interaction_window * 1000.0
        for r in reversed(self._session_recs(session_id)):
            if r.status == "delivered":
                if ts <= r.delivered_ts + window_ms:
                    _transition(r, "interacted", ts)
                else:
                    _transition(r, "expired", r.delivered_ts + int(window_ms))
                return

    def record_interaction(self, rec_id: str, event: TraceEvent,
                           window: float | None = None) -> Recommendation:
        """Resolve one recommendation from a popup click (or timeout)."""
        rec = self._find(rec_id)
        window = self.coder.interaction_window if window is None else window
        window_ms = window * 1000.0
        if rec.status != "delivered":
            return rec
        if event.action == "popup_click" and event.ts <= rec.delivered_ts + window_ms:
            _transition(rec, "interacted", event.ts)
        elif event.ts > rec.delivered_ts + window_ms:
            _transition(rec, "expired", rec.delivered_ts + int(window_ms))
        return rec

    def recommendations(self, session_id: str, include_history: bool | None = None) -> list[Recommendation]:
        if include_history is None:
            include_history = self.policy.resurface_enabled
        recs = self._session_recs(session_id)
        if include_history:
            return list(recs)
        return [r for r in recs if r.status in ("queued", "delivered")]

    def finalize(self) -> None:
        """Expire deliveries whose window elapsed before their stream ended."""
        for sid, events in self._events.items():
            if events:
                self._expire_stale(sid, events[-1].ts)

    def _record_push_event(self, trigger: TraceEvent, action: str,
                           payload: Mapping) -> None:
        self._pushed_events.setdefault(trigger.session_id, []).append(TraceEvent(
            ts=trigger.ts,
            session_id=trigger.session_id,
            participant_id=trigger.participant_id,
            role=trigger.role,
            expertise=trigger.expertise,
            condition=trigger.condition,
            task_id=trigger.task_id,
            action=action,
            url=trigger.url,
            payload=dict(payload),
        ))

    def replay_corpus(self, corpus: Corpus) -> list[Recommendation]:
        """Batch replay; events processed in global timestamp order."""
        events = sorted(corpus.events(), key=lambda e: (e.ts, e.session_id))
        delivered: list[Recommendation] = []
        for ev in events:
            delivered.extend(self.process_event(ev))
        self.finalize()
        return delivered

    def push_log(self) -> list[dict]:
        """Deterministic, serializable log of every decision, all sessions."""
        rows = []
        for sid in sorted(self._recs):
            for r in self._recs[sid]:
                rows.append(serialize_recommendation(r))
        return rows

    def augmented_session(self, session: Session) -> Session:
        """Session with this engine's synthetic push events merged in."""
        extra = [ev for ev in self._pushed_events.get(session_events_id(session), [])]
        if not extra:
            return session
        merged = sorted(list(session.events) + extra,
                        key=lambda e: (e.ts, 0 if e.action not in ("push_shareflow", "push_knowledge") else 1))
        return replace(session, events=tuple(merged))

    def augmented_corpus(self, corpus: Corpus) -> Corpus:
        return Corpus(sessions=tuple(self.augmented_session(s) for s in corpus.sessions),
                      source=corpus.source, diagnostics=corpus.diagnostics)


def session_events_id(session: Session) -> str:
    return session.events[0].session_id if session.events else ""


def serialize_recommendation(rec: Recommendation) -> dict:
    payload = rec.payload
    if not isinstance(payload, str):
        payload = [{"doc_id": r.doc_id, "score": round(r.score, 9),
                    "matched_terms": list(r.matched_terms)} for r in payload]
    return {
        "id": rec.id,
        "kind": rec.kind,
        "payload": payload,
        "score": round(rec.score, 9),
        "issued_ts": rec.issued_ts,
        "status": rec.status,
        "session": rec.session_id,
        "delivered_ts": rec.delivered_ts,
        "resolved_ts": rec.resolved_ts,
        "suppress_reason": rec.suppress_reason,
    }


def push_log_json(engine: PushEngine) -> bytes:
    return (json.dumps(engine.push_log(), indent=1, sort_keys=True) + "\n").encode("utf-8")
