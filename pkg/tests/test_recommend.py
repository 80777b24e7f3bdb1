import pytest

from kmflow.coding import CoderConfig, KMCode, code_corpus
from kmflow.errors import EmptyPrefix, NoQuery, UnknownRecommendation
from kmflow.fixtures import novice_prefix_corpus, novice_prefix_events, sample_library
from kmflow.recommend import (Candidate, PushEngine, PushPolicyConfig,
                              Recommendation, decide_push, detect_context,
                              match_shareflows, synthesize_query)
from kmflow.repository import Document, build_index

from .conftest import make_corpus, make_event, make_session

S = 1000


class TestDetectContext:
    def test_active_url_and_top_term(self):
        events = [
            make_event(0, "navigation", url="https://a.example"),
            make_event(S, "click", url="https://b.example",
                       payload={"terms": {"gradebook": 3}}),
        ]
        ctx = detect_context(events)
        assert ctx.active_url == "https://b.example"
        assert max(ctx.page_terms, key=ctx.page_terms.get) == "gradebook"

    def test_terms_only_from_active_url(self):
        events = [
            make_event(0, "click", url="https://a.example",
                       payload={"terms": {"other": 9}}),
            make_event(S, "click", url="https://b.example",
                       payload={"terms": {"gradebook": 1}}),
        ]
        ctx = detect_context(events)
        assert "other" not in ctx.page_terms

    def test_empty_prefix(self):
        with pytest.raises(EmptyPrefix):
            detect_context([])

    def test_recent_codes_window_cap(self):
        events = []
        for i in range(15):  # 15 select+type pairs -> 15 coded lines
            events.append(make_event(2 * i * S, "select"))
            events.append(make_event((2 * i + 1) * S, "type"))
        ctx = detect_context(events, n_recent=10)
        assert len(ctx.recent_codes) == 10
        assert set(ctx.recent_codes) == {KMCode.SP2_SelectType.value}

    def test_candidate_tasks_ranked_by_overlap(self):
        events = [make_event(0, "click", payload={"terms": {"gradebook": 3, "quiz": 1}})]
        ctx = detect_context(events, task_descriptors={
            "quiz": ["quiz"], "gradebook": ["gradebook"], "forum": ["forum"]})
        assert ctx.candidate_tasks == ("gradebook", "quiz")


class TestSynthesizeQuery:
    def test_stopwords_and_ranking(self):
        q = synthesize_query({"gradebook": 5, "item": 2, "the": 9}, limit=2)
        assert q == "gradebook item"

    def test_empty_terms(self):
        with pytest.raises(NoQuery):
            synthesize_query({}, limit=3)

    def test_single_term(self):
        assert synthesize_query({"zoom": 1}, limit=5) == "zoom"

    def test_deterministic_tie_break(self):
        assert synthesize_query({"b": 1, "a": 1}, limit=2) == "a b"


class TestMatchShareflows:
    def brute_force_score(self, ctx, flow):
        # independent re-statement of the blend for the toy library
        from kmflow.repository import tokenize
        lcp = 0
        for a, b in zip(ctx.recent_codes, flow.coded_labels):
            if a != b:
                break
            lcp += 1
        prefix = lcp / len(flow.coded_labels) if flow.coded_labels else 0.0
        vocab = set(tokenize(flow.title))
        for step in flow.steps:
            vocab |= set(tokenize(step.caption))
        total = sum(ctx.page_terms.values())
        overlap = sum(w for t, w in ctx.page_terms.items() if t in vocab)
        term = overlap / total if total else 0.0
        return 0.5 * prefix + 0.5 * term

    def test_matching_flow_tops_with_min_score(self):
        library = sample_library()
        ctx = detect_context(novice_prefix_events()[:4])
        ranked = match_shareflows(ctx, library)
        expected = sorted(
            (Candidate(f.id, self.brute_force_score(ctx, f)) for f in library),
            key=lambda c: (-c.score, c.flow_id))
        assert [(c.flow_id, pytest.approx(c.score)) for c in ranked] == \
               [(c.flow_id, pytest.approx(c.score)) for c in expected]
        assert ranked[0].flow_id == "sf-gradebook"
        assert ranked[0].score >= 0.25

    def test_empty_library(self):
        ctx = detect_context(novice_prefix_events()[:2])
        assert match_shareflows(ctx, []) == []

    def test_tie_break_by_flow_id(self):
        library = sample_library()
        ctx = detect_context([make_event(0, "scroll")])  # nothing matches
        ranked = match_shareflows(ctx, library)
        assert [c.flow_id for c in ranked] == ["sf-forum", "sf-gradebook", "sf-quiz"]


class TestDecidePush:
    def test_high_score_empty_history(self):
        out = decide_push([Candidate("sf-x", 0.8)], [], PushPolicyConfig(), now_ts=0)
        assert len(out) == 1 and out[0].status == "queued"

    def test_cooldown_suppression(self):
        history = [Recommendation(id="r0", kind="shareflow_push", payload="sf-x",
                                  score=0.9, issued_ts=0, status="interacted")]
        out = decide_push([Candidate("sf-x", 0.8)], history,
                          PushPolicyConfig(cooldown=600), now_ts=120_000)
        assert out[0].status == "suppressed"
        assert out[0].suppress_reason == "cooldown"

    def test_max_active_cap(self):
        out = decide_push([Candidate("sf-a", 0.9), Candidate("sf-b", 0.8),
                           Candidate("sf-c", 0.7)],
                          [], PushPolicyConfig(max_active=2), now_ts=0)
        statuses = [r.status for r in out]
        assert statuses.count("queued") == 2
        assert out[2].suppress_reason == "max_active"

    def test_below_min_score_never_emitted(self):
        out = decide_push([Candidate("sf-a", 0.49)], [], PushPolicyConfig(), now_ts=0)
        assert out[0].status == "suppressed"
        assert out[0].suppress_reason == "below_min_score"


class TestEngineReplay:
    def test_fixture_pushes_match_once_and_suppresses_repeat(self):
        engine = PushEngine(sample_library())
        delivered = engine.replay_corpus(novice_prefix_corpus())
        assert len(delivered) == 1
        assert delivered[0].payload == "sf-gradebook"
        log = engine.push_log()
        assert sum(1 for r in log if r["status"] in ("delivered", "interacted",
                                                     "expired")) == 1
        assert any(r["suppress_reason"] == "cooldown" for r in log)

    def test_replay_determinism(self):
        runs = []
        for _ in range(2):
            engine = PushEngine(sample_library())
            engine.replay_corpus(novice_prefix_corpus())
            runs.append(engine.push_log())
        assert runs[0] == runs[1]

    def test_no_rec_below_min_score_delivered(self):
        engine = PushEngine(sample_library(), policy=PushPolicyConfig(min_score=0.99))
        delivered = engine.replay_corpus(novice_prefix_corpus())
        assert delivered == []

    def test_active_never_exceeds_max(self):
        # library of similar flows so several cross the threshold at once
        lib = sample_library()
        policy = PushPolicyConfig(min_score=0.05, max_active=2, cooldown=1.0)
        engine = PushEngine(lib, policy=policy)
        for ev in novice_prefix_events():
            engine.process_event(ev)
            active = [r for r in engine.recommendations("novice-1", True)
                      if r.status in ("queued", "delivered")]
            assert len(active) <= 2

    def test_interaction_resolves_to_interacted(self):
        engine = PushEngine(sample_library())
        events = novice_prefix_events()
        delivered = []
        for ev in events[:4]:
            delivered += engine.process_event(ev)
        assert delivered
        click = make_event(events[3].ts + 10_000, "popup_click",
                           participant="N01", session="novice-1")
        engine.process_event(click)
        rec = engine.recommendations("novice-1", True)
        assert any(r.status == "interacted" for r in rec)

    def test_expiry_without_click(self):
        engine = PushEngine(sample_library())
        events = novice_prefix_events()
        for ev in events[:4]:
            engine.process_event(ev)
        late = make_event(events[3].ts + 60_000, "scroll",
                          participant="N01", session="novice-1")
        engine.process_event(late)
        assert any(r.status == "expired"
                   for r in engine.recommendations("novice-1", True))

    def test_record_interaction_unknown_id(self):
        engine = PushEngine(sample_library())
        with pytest.raises(UnknownRecommendation):
            engine.record_interaction("nope", make_event(0, "popup_click"))

    def test_knowledge_push_from_index(self):
        docs = [Document(id="doc-g", title="Creating gradebook items",
                         body="gradebook item steps")]
        engine = PushEngine([], index=build_index(docs),
                            policy=PushPolicyConfig(min_score=0.1))
        delivered = engine.replay_corpus(novice_prefix_corpus())
        kinds = {r.kind for r in delivered}
        assert kinds == {"knowledge_push"}
        payload = delivered[0].payload
        assert payload[0].doc_id == "doc-g"
        assert 0.0 <= delivered[0].score <= 1.0


class TestRoundTripCoding:
    def roundtrip_codes(self, interact: bool):
        engine = PushEngine(sample_library())
        corpus = novice_prefix_corpus()
        events = list(corpus.sessions[0].events)
        for ev in events[:4]:
            engine.process_event(ev)
        if interact:
            click = make_event(events[3].ts + 5_000, "popup_click",
                               participant="N01", session="novice-1")
            engine.process_event(click)
            corpus = make_corpus(make_session(
                events[:4] + [click], participant="N01"))
        else:
            tail = make_event(events[3].ts + 120_000, "navigation",
                              participant="N01", session="novice-1")
            engine.process_event(tail)
            corpus = make_corpus(make_session(
                events[:4] + [tail], participant="N01"))
        engine.finalize()
        augmented = engine.augmented_corpus(corpus)
        return engine, [l.code for l in code_corpus(augmented)]

    def test_interacted_codes_with_interaction(self):
        engine, codes = self.roundtrip_codes(interact=True)
        statuses = [r.status for r in engine.recommendations("novice-1", True)
                    if r.status not in ("suppressed",)]
        assert statuses.count("interacted") == 1
        assert codes.count(KMCode.SFPush_WithInteraction) == 1
        assert KMCode.SFPush_NoInteraction not in codes

    def test_expired_codes_without_interaction(self):
        engine, codes = self.roundtrip_codes(interact=False)
        statuses = [r.status for r in engine.recommendations("novice-1", True)
                    if r.status not in ("suppressed",)]
        assert statuses.count("expired") == 1
        assert codes.count(KMCode.SFPush_NoInteraction) == 1
        assert KMCode.SFPush_WithInteraction not in codes
