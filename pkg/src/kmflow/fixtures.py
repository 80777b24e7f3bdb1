"""Deterministic fixtures: a small guide library and a matching novice
prefix, used by the replay tests and the demo scripts."""

from __future__ import annotations

from .coding import KMCode
from .shareflow import ShareFlow, build_shareflow
from .trace import Corpus, Session, TraceEvent

GRADEBOOK_URL = "https://lms.example/gradebook"


def sample_library() -> list[ShareFlow]:
    """Three expert guides; only the gradebook one matches the novice prefix."""
    gradebook = build_shareflow(
        ["navigation:open-gradebook", "select:item-type", "type:item-name",
         "submit:save"],
        author_id="E01", author_name="Avery (Chief Examiner)",
        task_id="gradebook", flow_id="sf-gradebook",
        title="How to add a gradebook item",
        links={"navigation:open-gradebook": GRADEBOOK_URL},
        coded_labels=[KMCode.AP4_OpenInteract.value, KMCode.SP2_SelectType.value,
                      KMCode.SP3_TypeDriven.value, KMCode.ShP1_ShareResource.value],
        created_ts=1_700_000_000_000,
    )
    forum = build_shareflow(
        ["navigation:open-forum", "click:new-thread", "type:post", "submit:publish"],
        author_id="E02", author_name="Blake", task_id="forum",
        flow_id="sf-forum", title="How to set up a discussion forum",
        coded_labels=[KMCode.AP2_SwitchTabs.value, KMCode.SP4_OpenType.value,
                      KMCode.ShP1_ShareResource.value],
        created_ts=1_700_000_000_000,
    )
    quiz = build_shareflow(
        ["navigation:open-quiz", "click:add-question", "select:question-type",
         "submit:save"],
        author_id="E03", author_name="Casey", task_id="quiz",
        flow_id="sf-quiz", title="How to build a timed quiz",
        coded_labels=[KMCode.AP1_SearchExplore.value, KMCode.SP1_TypeInteract.value,
                      KMCode.ShP1_ShareResource.value],
        created_ts=1_700_000_000_000,
    )
    return [gradebook, forum, quiz]


def novice_prefix_events(base_ts: int = 1_700_000_100_000) -> list[TraceEvent]:
    """A novice opening the gradebook: codes to AP4 then SP2, matching the
    first two coded steps of the gradebook guide."""
    common = dict(session_id="novice-1", participant_id="N01", role="tutor",
                  expertise="novice", condition="kms", task_id="gradebook")
    terms = {"gradebook": 3, "item": 2}
    return [
        TraceEvent(ts=base_ts, action="navigation", url=GRADEBOOK_URL, **common),
        TraceEvent(ts=base_ts + 2_000, action="click", url=GRADEBOOK_URL,
                   target="open-gradebook", **common),
        TraceEvent(ts=base_ts + 5_000, action="select", url=GRADEBOOK_URL,
                   target="item-type", payload={"terms": terms}, **common),
        TraceEvent(ts=base_ts + 9_000, action="type", url=GRADEBOOK_URL,
                   target="item-name", payload={"terms": terms}, **common),
        TraceEvent(ts=base_ts + 15_000, action="scroll", url=GRADEBOOK_URL, **common),
        TraceEvent(ts=base_ts + 21_000, action="click", url=GRADEBOOK_URL,
                   target="item-name", **common),
    ]


def novice_prefix_corpus() -> Corpus:
    events = novice_prefix_events()
    return Corpus(sessions=(Session(
        participant_id="N01", task_id="gradebook", condition="kms",
        events=tuple(events)),), source="fixture:novice-prefix")
