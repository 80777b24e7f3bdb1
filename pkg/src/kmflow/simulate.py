"""Deterministic synthetic corpora for desk-scale evaluation.

Given a scenario (participant counts per expertise level, tasks, per-condition
effect levels, noise rates) and a seed, generates sessions with query/response
chains, capture phases, push/ack events and expert step walkthroughs, plus the
matching annotations. The same (scenario, seed) pair always yields the same
corpus, event for event.
"""

from __future__ import annotations

import json
import random
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import InvalidScenario
from .harness import Annotations
from .trace import Corpus, Session, TraceEvent

_EXPERTISE_PREFIX = {"expert": "E", "journeyman": "J", "novice": "N"}

# Canonical expert walkthrough per task; targets make mineable step labels.
_TASK_STEPS = {
    "default": ("open-home", "open-settings", "enter-details", "save-item", "publish"),
}


def _task_steps(task: str) -> tuple[str, ...]:
    return _TASK_STEPS.get(task, _TASK_STEPS["default"])


@dataclass(frozen=True)
class Scenario:
    name: str
    conditions: tuple[str, str]                 # (treatment, baseline)
    tasks: tuple[str, ...]
    participants: Mapping[str, int]             # expertise -> count
    effects: Mapping[str, Mapping[str, float]]  # metric -> condition -> level
    time_limit: float = 1200.0                  # seconds
    base_ts: int = 1_700_000_000_000
    noise: float = 0.15                         # relative jitter on durations
    interact_rate: float = 0.7                  # popup click probability
    profile: str = "iter3"

    REQUIRED_EFFECTS = ("retrieval_speed", "query_count", "time_to_action",
                        "capture_time", "quality", "completion_rate",
                        "relevance_rate")

    def __post_init__(self):
        if len(self.conditions) != 2 or len(set(self.conditions)) != 2:
            raise InvalidScenario("exactly two distinct conditions required")
        if not self.tasks:
            raise InvalidScenario("at least one task required")
        if not self.participants or all(v == 0 for v in self.participants.values()):
            raise InvalidScenario("at least one participant required")
        unknown = set(self.participants) - set(_EXPERTISE_PREFIX)
        if unknown:
            raise InvalidScenario(f"unknown expertise levels: {sorted(unknown)}")
        for metric in self.REQUIRED_EFFECTS:
            levels = self.effects.get(metric)
            if not levels:
                raise InvalidScenario(f"effects missing metric {metric!r}")
            for cond in self.conditions:
                if cond not in levels:
                    raise InvalidScenario(f"effects[{metric!r}] missing condition {cond!r}")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Scenario":
        try:
            return cls(
                name=doc.get("name", "scenario"),
                conditions=tuple(doc["conditions"]),
                tasks=tuple(doc["tasks"]),
                participants=dict(doc["participants"]),
                effects={k: dict(v) for k, v in doc["effects"].items()},
                time_limit=float(doc.get("time_limit", 1200.0)),
                base_ts=int(doc.get("base_ts", 1_700_000_000_000)),
                noise=float(doc.get("noise", 0.15)),
                interact_rate=float(doc.get("interact_rate", 0.7)),
                profile=doc.get("profile", "iter3"),
            )
        except KeyError as exc:
            raise InvalidScenario(f"scenario missing field {exc.args[0]!r}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _participants(scenario: Scenario) -> list[tuple[str, str]]:
    out = []
    for level in ("expert", "journeyman", "novice"):
        for i in range(scenario.participants.get(level, 0)):
            out.append((f"{_EXPERTISE_PREFIX[level]}{i + 1:02d}", level))
    return out


class _SessionBuilder:
    def __init__(self, rng: random.Random, scenario: Scenario,
                 participant: str, expertise: str, task: str, condition: str):
        self.rng = rng
        self.sc = scenario
        self.events: list[TraceEvent] = []
        self.meta = dict(participant=participant, expertise=expertise,
                         task=task, condition=condition)
        # hash() is salted per process; crc32 keeps session starts reproducible
        offset = zlib.crc32(f"{participant}|{task}|{condition}".encode()) % 1000
        self.ts = scenario.base_ts + offset
        self.session_id = f"{participant}-{task}-{condition}"
        self.url = f"https://lms.example/{task}"

    def jitter(self, seconds: float) -> int:
        spread = self.sc.noise * seconds
        return max(1, int((seconds + self.rng.uniform(-spread, spread)) * 1000))

    def emit(self, action: str, *, dt: float = 2.0, url: str | None = None,
             target: str | None = None, payload: dict | None = None) -> TraceEvent:
        self.ts += self.jitter(dt)
        ev = TraceEvent(
            ts=self.ts,
            session_id=self.session_id,
            participant_id=self.meta["participant"],
            role="tutor",
            expertise=self.meta["expertise"],
            condition=self.meta["condition"],
            task_id=self.meta["task"],
            action=action,
            url=url or self.url,
            target=target,
            payload=payload,
        )
        self.events.append(ev)
        return ev


def simulate_sessions(scenario: Scenario, seed: int) -> tuple[Corpus, Annotations]:
    """Generate (corpus, annotations) for the scenario; deterministic per seed."""
    rng = random.Random(seed)
    treatment, baseline = scenario.conditions
    annotations = Annotations()
    sessions: list[Session] = []

    for p_idx, (participant, expertise) in enumerate(_participants(scenario)):
        order = p_idx % 2  # which condition came first for this participant
        for task in scenario.tasks:
            for condition in scenario.conditions:
                b = _SessionBuilder(rng, scenario, participant, expertise, task, condition)
                eff = {m: scenario.effects[m][condition]
                       for m in scenario.REQUIRED_EFFECTS}
                page_terms = {task: 3, "teaching": 1}

                b.emit("navigation", dt=1.0, url=f"https://lms.example/home")
                b.emit("navigation", dt=3.0, payload={"terms": page_terms})
                b.emit("scroll", dt=2.0)
                b.emit("click", dt=2.0, target="open-panel")
                b.emit("navigation", dt=2.0, url=b.url + "/detail")

                if expertise == "expert" and condition == treatment:
                    # clean canonical walkthrough; the miner's raw material
                    for step in _task_steps(task):
                        action = ("navigation" if step.startswith("open-")
                                  else "type" if step.startswith("enter-")
                                  else "click")
                        b.emit(action, dt=4.0, target=step)
                    b.emit("submit", dt=3.0, target="publish")

                # query/response chains (the pull workflow)
                n_queries = max(0, int(round(eff["query_count"] + rng.uniform(-0.4, 0.4))))
                for q in range(n_queries):
                    b.emit("query", dt=5.0,
                           payload={"text": f"how to {task} step {q + 1}",
                                    "terms": page_terms})
                    b.emit("response", dt=eff["retrieval_speed"],
                           url=b.url, payload={"text": f"answer {q + 1}"})
                    b.emit("click", dt=eff["time_to_action"], target="follow-answer")
                    rating = 3 if rng.random() < eff["relevance_rate"] else 1
                    annotations.relevance[(participant, task, condition, q)] = rating

                # push dissemination only exists in the treatment condition
                if condition == treatment and expertise != "expert":
                    b.emit("push_shareflow", dt=2.0,
                           payload={"shareflow": f"sf-{task}"})
                    if rng.random() < scenario.interact_rate:
                        b.emit("popup_click", dt=4.0, target="popup")
                    b.emit("push_knowledge", dt=6.0,
                           payload={"docs": [f"doc-{task}-1"]})
                    if rng.random() < scenario.interact_rate:
                        b.emit("popup_click", dt=4.0, target="popup")

                # capture phase: four clicks and a type (store-family codes)
                capture_each = max(1.0, eff["capture_time"] / 2.0)
                for _ in range(4):
                    b.emit("click", dt=capture_each / 4.0, target="editor")
                b.emit("type", dt=capture_each / 4.0, target="editor")
                b.emit("type", dt=capture_each, target="editor")  # dwell run
                b.emit("type", dt=6.0, target="editor")
                b.emit("submit", dt=3.0, target="save-notes")

                completed = rng.random() < eff["completion_rate"]
                quality = round(min(1.0, max(0.0, rng.gauss(eff["quality"], 0.05))), 3)
                key = (participant, task, condition)
                annotations.quality[key] = quality
                annotations.completed[key] = completed
                annotations.time_limit[key] = scenario.time_limit
                annotations.order[key] = order

                sessions.append(Session(
                    participant_id=participant,
                    task_id=task,
                    condition=condition,
                    events=tuple(b.events),
                    outcome="pass" if completed else "fail",
                    order_index=order,
                ))

    corpus = Corpus(sessions=tuple(sessions), source=f"simulated:{scenario.name}:{seed}")
    return corpus, annotations
