"""Attributed step guides and their scrollytelling rendering.

A guide is built from a mined step flow: descriptive title, mandatory expert
attribution, short captions (max 140 chars), at most one visual cue per step,
and an optional link per step. Rendering produces a single self-contained
HTML document with one full-viewport section per step, navigable by scrolling.
"""

from __future__ import annotations

import html
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import EmptyFlow, MissingAuthor

MAX_CAPTION_CHARS = 140
DEFAULT_MAX_STEPS = 15

_VERBS = {
    "navigation": "Go to",
    "click": "Click",
    "type": "Type into",
    "select": "Select",
    "submit": "Submit",
    "scroll": "Scroll",
    "query": "Ask about",
}


@dataclass(frozen=True)
class Step:
    index: int
    label: str
    caption: str
    cue: str | None = None
    link: str | None = None


@dataclass(frozen=True)
class ShareFlow:
    id: str
    title: str
    author_id: str
    author_name: str
    task_id: str
    steps: tuple[Step, ...]
    links: tuple[str, ...] = ()
    created_ts: int = 0
    coded_labels: tuple[str, ...] = ()
    truncated: bool = False

    def __post_init__(self):
        if not self.steps:
            raise EmptyFlow("a guide needs at least one step")
        if not self.title:
            raise ValueError("title must be non-empty")
        if not self.author_id:
            raise MissingAuthor("attribution is mandatory")


def caption_for(label: str) -> str:
    action, _, rest = label.partition(":")
    verb = _VERBS.get(action)
    if verb is None:
        text = label
    elif rest:
        text = f"{verb} '{rest}'"
    else:
        text = verb
    return text[:MAX_CAPTION_CHARS]


def build_shareflow(flow: Sequence[str], *, author_id: str, task_id: str,
                    author_name: str = "", title: str | None = None,
                    flow_id: str | None = None,
                    links: Mapping[str, str] | None = None,
                    cues: Mapping[str, str] | None = None,
                    coded_labels: Sequence[str] = (),
                    created_ts: int = 0,
                    max_steps: int = DEFAULT_MAX_STEPS) -> ShareFlow:
    """Build a guide from an ordered step-label flow.

    Consecutive duplicate labels collapse into one step. Flows longer than
    max_steps are truncated with the guide flagged accordingly. Click steps
    get a click-highlight cue; per-label links come from the source trace.
    """
    if not flow:
        raise EmptyFlow("flow has no steps")
    if not author_id:
        raise MissingAuthor("attribution is mandatory")
    links = links or {}
    cues = cues or {}

    labels: list[str] = []
    for label in flow:
        if not labels or labels[-1] != label:
            labels.append(label)
    truncated = len(labels) > max_steps
    labels = labels[:max_steps]

    steps = []
    for i, label in enumerate(labels, start=1):
        cue = cues.get(label)
        if cue is None and label.startswith("click:"):
            cue = f"click-highlight:{label.partition(':')[2]}"
        steps.append(Step(
            index=i,
            label=label,
            caption=caption_for(label),
            cue=cue,
            link=links.get(label),
        ))

    flow_links: list[str] = []
    for step in steps:
        if step.link and step.link not in flow_links:
            flow_links.append(step.link)

    return ShareFlow(
        id=flow_id or f"sf-{task_id}-{author_id}",
        title=title or f"How to {task_id}",
        author_id=author_id,
        author_name=author_name or author_id,
        task_id=task_id,
        steps=tuple(steps),
        links=tuple(flow_links),
        created_ts=created_ts,
        coded_labels=tuple(coded_labels),
        truncated=truncated,
    )


_PAGE_CSS = """
body { margin: 0; font-family: Georgia, serif; color: #222; }
header { padding: 3rem 2rem 1rem; }
h1 { margin: 0 0 0.25rem; font-size: 2rem; }
.author { color: #666; margin: 0; }
section.step { min-height: 100vh; padding: 4rem 2rem; box-sizing: border-box;
               border-top: 1px solid #ddd; scroll-snap-align: start; }
html { scroll-snap-type: y proximity; }
.cue { display: inline-block; background: #fff3bf; border: 2px solid #f59f00;
       border-radius: 4px; padding: 0.5rem 1rem; }
.step-link a { color: #1c7ed6; }
.truncation { background: #ffe3e3; padding: 0.5rem 1rem; }
""".strip()


def render_scrollytelling(sf: ShareFlow) -> bytes:
    """Render a guide as one self-contained HTML document (no external
    resources). Byte-identical output for equal guides."""
    parts = [
        "<!DOCTYPE html>",
        '<html lang="en">',
        "<head>",
        '<meta charset="utf-8">',
        f"<title>{html.escape(sf.title)}</title>",
        f"<style>{_PAGE_CSS}</style>",
        "</head>",
        "<body>",
        "<header>",
        f"<h1>{html.escape(sf.title)}</h1>",
        f'<p class="author">Shared by {html.escape(sf.author_name)} '
        f"({html.escape(sf.author_id)})</p>",
        "</header>",
    ]
    if sf.truncated:
        parts.append('<p class="truncation">This guide was shortened; the source '
                     "flow had more steps than shown.</p>")
    for step in sf.steps:
        parts.append(f'<section class="step" id="step-{step.index}">')
        parts.append(f"<h2>Step {step.index}</h2>")
        parts.append(f'<p class="caption">{html.escape(step.caption)}</p>')
        if step.cue:
            parts.append(f'<p class="cue" data-cue="{html.escape(step.cue, quote=True)}">'
                         f"{html.escape(step.cue)}</p>")
        if step.link:
            link = html.escape(step.link, quote=True)
            parts.append(f'<p class="step-link"><a href="{link}">{link}</a></p>')
        parts.append("</section>")
    parts.extend(["</body>", "</html>"])
    return ("\n".join(parts) + "\n").encode("utf-8")


def shareflow_to_json(sf: ShareFlow) -> str:
    doc = {
        "id": sf.id,
        "title": sf.title,
        "author": {"id": sf.author_id, "name": sf.author_name},
        "task": sf.task_id,
        "steps": [
            {"index": s.index, "label": s.label, "caption": s.caption,
             "cue": s.cue, "link": s.link}
            for s in sf.steps
        ],
        "links": list(sf.links),
        "created_ts": sf.created_ts,
        "coded_labels": list(sf.coded_labels),
        "truncated": sf.truncated,
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=True)


def shareflow_from_json(text: str) -> ShareFlow:
    doc = json.loads(text)
    return ShareFlow(
        id=doc["id"],
        title=doc["title"],
        author_id=doc["author"]["id"],
        author_name=doc["author"]["name"],
        task_id=doc["task"],
        steps=tuple(
            Step(index=s["index"], label=s["label"], caption=s["caption"],
                 cue=s.get("cue"), link=s.get("link"))
            for s in doc["steps"]
        ),
        links=tuple(doc.get("links", ())),
        created_ts=doc.get("created_ts", 0),
        coded_labels=tuple(doc.get("coded_labels", ())),
        truncated=doc.get("truncated", False),
    )
