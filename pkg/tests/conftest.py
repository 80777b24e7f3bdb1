from __future__ import annotations

import pytest

from kmflow.trace import Corpus, Session, TraceEvent


def make_event(ts: int, action: str, *, participant="P1", task="gradebook",
               condition="kms", session=None, url="https://lms.example/gradebook",
               target=None, payload=None, role="tutor", expertise="novice") -> TraceEvent:
    return TraceEvent(
        ts=ts,
        session_id=session or f"{participant}-{task}-{condition}",
        participant_id=participant,
        role=role,
        expertise=expertise,
        condition=condition,
        task_id=task,
        action=action,
        url=url,
        target=target,
        payload=payload,
    )


def make_session(events, *, participant="P1", task="gradebook", condition="kms",
                 outcome="unknown", order_index=0) -> Session:
    return Session(
        participant_id=participant,
        task_id=task,
        condition=condition,
        events=tuple(events),
        outcome=outcome,
        order_index=order_index,
    )


def make_corpus(*sessions, source="test") -> Corpus:
    return Corpus(sessions=tuple(sessions), source=source)


@pytest.fixture
def event():
    return make_event
