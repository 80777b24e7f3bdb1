import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmflow.errors import DuplicateId, EmptyQuery, SnapshotFormatError
from kmflow.repository import (Document, KnowledgeIndex, build_index, ingest,
                               load_documents, load_index, save_index, search,
                               tokenize)

DOCS = [
    Document(id="d1", title="Zoom lecture", body="zoom lecture setup"),
    Document(id="d2", title="Gradebook item", body="create gradebook item"),
    Document(id="d3", title="Moodle forum", body="moodle forum setup"),
]


class TestTokenizer:
    def test_lowercase_and_punctuation(self):
        assert tokenize("Create, Gradebook; ITEM!") == ["create", "gradebook", "item"]

    def test_stopwords_excluded(self):
        assert tokenize("the and of") == []


class TestIngest:
    def test_postings_from_body(self):
        idx = build_index([Document(id="d1", title="", body="Create Gradebook item",
                                    url="u")])
        assert set(idx.state.postings) == {"create", "gradebook", "item"}

    def test_duplicate_id(self):
        idx = build_index([DOCS[0]])
        with pytest.raises(DuplicateId):
            ingest(DOCS[0], idx)

    def test_title_fallback_for_empty_body(self):
        idx = build_index([Document(id="d1", title="Zoom setup", body="")])
        assert set(idx.state.postings) == {"zoom", "setup"}

    def test_empty_doc_rejected(self):
        with pytest.raises(ValueError):
            Document(id="d1", title="", body="")


class TestSearch:
    def test_unique_term_match(self):
        idx = build_index(DOCS)
        results = search(idx, "gradebook", k=3)
        assert results[0].doc_id == "d2"
        assert "gradebook" in results[0].matched_terms

    def test_stopword_query(self):
        idx = build_index(DOCS)
        with pytest.raises(EmptyQuery):
            search(idx, "the and of")

    def test_tie_break_by_doc_id(self):
        idx = build_index([
            Document(id="b", title="widget news"),
            Document(id="a", title="widget news"),
        ])
        results = search(idx, "widget", k=2)
        assert [r.doc_id for r in results] == ["a", "b"]

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            search(build_index(DOCS), "zoom", k=0)

    def test_never_returns_docs_without_query_terms(self):
        idx = build_index(DOCS)
        for r in search(idx, "zoom forum", k=10):
            assert r.matched_terms

    def test_irrelevant_document_preserves_order(self):
        idx = build_index(DOCS)
        before = [r.doc_id for r in search(idx, "setup lecture", k=10)]
        ingest(Document(id="zz", title="Completely unrelated topic",
                        body="nothing shared whatsoever"), idx)
        after = [r.doc_id for r in search(idx, "setup lecture", k=10)]
        assert before == after

    @settings(max_examples=20, deadline=None)
    @given(st.permutations(DOCS))
    def test_ingestion_order_independence(self, docs):
        base = build_index(DOCS)
        permuted = build_index(docs)
        for query in ("zoom", "gradebook item", "setup"):
            assert [ (r.doc_id, pytest.approx(r.score)) for r in search(base, query)] == \
                   [ (r.doc_id, pytest.approx(r.score)) for r in search(permuted, query)]


class TestConcurrency:
    def test_concurrent_readers_during_writes(self):
        idx = build_index(DOCS)
        errors = []

        def reader():
            try:
                for _ in range(200):
                    for r in search(idx, "setup zoom forum", k=5):
                        assert r.score > 0
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        def writer():
            try:
                for i in range(100):
                    ingest(Document(id=f"w{i}", title=f"written {i}",
                                    body="filler text"), idx)
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=reader) for _ in range(4)]
        threads.append(threading.Thread(target=writer))
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors


class TestSnapshot:
    def test_save_load_round_trip(self, tmp_path):
        idx = build_index(DOCS)
        path = tmp_path / "index.json"
        save_index(idx, path)
        loaded = load_index(path)
        assert [r.doc_id for r in search(loaded, "gradebook")] == \
               [r.doc_id for r in search(idx, "gradebook")]
        assert loaded.document("d1").title == "Zoom lecture"

    def test_version_header_checked(self, tmp_path):
        path = tmp_path / "index.json"
        path.write_text(json.dumps({"format_version": 99}))
        with pytest.raises(SnapshotFormatError):
            load_index(path)

    def test_load_documents_from_directory(self, tmp_path):
        (tmp_path / "a.json").write_text(json.dumps(
            {"id": "x1", "title": "One", "body": "alpha"}))
        (tmp_path / "b.jsonl").write_text("\n".join(
            json.dumps({"id": f"x{i}", "title": f"T{i}", "body": "beta"})
            for i in (2, 3)))
        docs = load_documents(tmp_path)
        assert [d.id for d in docs] == ["x1", "x2", "x3"]
