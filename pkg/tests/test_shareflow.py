import re
from html.parser import HTMLParser

import pytest

from kmflow.errors import EmptyFlow, MissingAuthor
from kmflow.shareflow import (MAX_CAPTION_CHARS, build_shareflow,
                              render_scrollytelling, shareflow_from_json,
                              shareflow_to_json)


def build(flow=("navigation:open", "click:save", "submit:done"), **kwargs):
    kwargs.setdefault("author_id", "E01")
    kwargs.setdefault("task_id", "gradebook")
    return build_shareflow(list(flow), **kwargs)


class _SectionParser(HTMLParser):
    def __init__(self):
        super().__init__()
        self.sections = []
        self.cues = 0

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if tag == "section" and attrs.get("class") == "step":
            self.sections.append(attrs.get("id"))
        if attrs.get("class") == "cue":
            self.cues += 1


def parse_doc(sf):
    parser = _SectionParser()
    parser.feed(render_scrollytelling(sf).decode("utf-8"))
    return parser


class TestBuild:
    def test_default_title_rule(self):
        sf = build(["a", "b", "c"])
        assert sf.title == "How to gradebook"
        assert len(sf.steps) == 3
        assert [s.index for s in sf.steps] == [1, 2, 3]

    def test_duplicate_collapse(self):
        sf = build(["a", "a", "b"])
        assert [s.label for s in sf.steps] == ["a", "b"]

    def test_empty_flow(self):
        with pytest.raises(EmptyFlow):
            build([])

    def test_missing_author(self):
        with pytest.raises(MissingAuthor):
            build_shareflow(["a"], author_id="", task_id="t")

    def test_captions_bounded(self):
        sf = build(["click:" + "x" * 500])
        assert all(len(s.caption) <= MAX_CAPTION_CHARS for s in sf.steps)

    def test_at_most_one_cue_per_step(self):
        sf = build(["click:save-button"])
        assert sf.steps[0].cue == "click-highlight:save-button"

    def test_max_steps_truncation(self):
        sf = build([f"click:step{i}" for i in range(20)])
        assert len(sf.steps) == 15
        assert sf.truncated

    def test_links_collected_in_step_order(self):
        sf = build(["navigation:a", "click:b"],
                   links={"click:b": "https://x", "navigation:a": "https://y"})
        assert sf.links == ("https://y", "https://x")

    def test_no_consecutive_duplicate_steps(self):
        sf = build(["a", "b", "b", "b", "a"])
        labels = [s.label for s in sf.steps]
        assert all(x != y for x, y in zip(labels, labels[1:]))


class TestRender:
    def test_section_count_and_order(self):
        sf = build(["a", "b", "c"])
        doc = parse_doc(sf)
        assert doc.sections == ["step-1", "step-2", "step-3"]

    def test_cue_marker_rendered(self):
        sf = build(["click:save-button"])
        assert parse_doc(sf).cues == 1

    def test_link_only_in_its_section(self):
        sf = build(["navigation:a", "click:b", "submit:c"],
                   links={"click:b": "https://only.example/x"})
        html = render_scrollytelling(sf).decode("utf-8")
        sections = re.split(r"<section", html)[1:]
        hits = [i for i, s in enumerate(sections) if "only.example" in s]
        assert hits == [1]

    def test_deterministic_bytes(self):
        sf = build()
        assert render_scrollytelling(sf) == render_scrollytelling(sf)

    def test_self_contained(self):
        html = render_scrollytelling(build()).decode("utf-8")
        assert "http" not in re.sub(r"href=\"[^\"]*\"", "", html).replace(
            "https://lms.example", "")
        assert "<script src" not in html and "link rel" not in html

    def test_author_attribution_present(self):
        html = render_scrollytelling(
            build(author_name="Avery Expert")).decode("utf-8")
        assert "Avery Expert" in html

    def test_truncation_warning_rendered(self):
        sf = build([f"click:s{i}" for i in range(20)])
        assert b"shortened" in render_scrollytelling(sf)

    def test_html_escaping(self):
        sf = build(["click:<b>bold</b>"])
        html = render_scrollytelling(sf).decode("utf-8")
        assert "<b>bold</b>" not in html


class TestSerialization:
    def test_round_trip(self):
        sf = build(["navigation:a", "click:b"],
                   author_name="Avery", title="How to do it",
                   links={"click:b": "https://x"},
                   coded_labels=["AP4_OpenInteract"], created_ts=123)
        assert shareflow_from_json(shareflow_to_json(sf)) == sf

    def test_round_trip_preserves_truncation_flag(self):
        sf = build([f"click:s{i}" for i in range(20)])
        assert shareflow_from_json(shareflow_to_json(sf)).truncated
