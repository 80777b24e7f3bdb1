"""Knowledge repository: document ingestion and ranked lexical retrieval.

The index is an inverted file with damped document-frequency term weighting
and document-length normalization. The term weight depends only on document
frequency (not on corpus size), so adding documents that share no terms with
a query can never reorder that query's results. The retrieval surface is a
plain (index, query, k) contract, so a dense retriever can replace it without
touching callers.

Concurrency: readers always see a consistent snapshot. Ingestion takes a
writer lock, builds an updated state, and swaps it in atomically; searches
read whichever snapshot is current when they start.
"""

from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DuplicateId, EmptyQuery, SnapshotFormatError

SNAPSHOT_FORMAT_VERSION = 1

# Fixed, shipped stopword list; keep stable so scores stay reproducible.
STOPWORDS = frozenset("""
a an and are as at be but by for from has have how i if in into is it its of
on or that the their them then there these this to was we were what when
where which who will with you your
""".split())

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, drop stopwords."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in STOPWORDS]


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    body: str = ""
    source_system: str = ""
    url: str = ""
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be non-empty")
        if not self.body and not self.title:
            raise ValueError("body may be empty only if title is non-empty")


@dataclass(frozen=True)
class SearchResult:
    doc_id: str
    score: float
    matched_terms: tuple[str, ...]


@dataclass(frozen=True)
class _IndexState:
    postings: Mapping[str, tuple[tuple[str, int], ...]]   # term -> ((doc, tf) sorted by doc)
    doc_lengths: Mapping[str, int]
    documents: Mapping[str, Document]


class KnowledgeIndex:
    def __init__(self):
        self._lock = threading.Lock()
        self._state = _IndexState(postings={}, doc_lengths={}, documents={})

    def __len__(self) -> int:
        return len(self._state.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._state.documents

    def document(self, doc_id: str) -> Document:
        return self._state.documents[doc_id]

    @property
    def state(self) -> _IndexState:
        return self._state


def _doc_terms(doc: Document) -> list[str]:
    return tokenize(doc.title) + tokenize(doc.body)


def ingest(doc: Document, idx: KnowledgeIndex) -> KnowledgeIndex:
    """Add one document; DuplicateId if the id is already indexed."""
    with idx._lock:
        state = idx._state
        if doc.id in state.documents:
            raise DuplicateId(doc.id)
        tokens = _doc_terms(doc)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1

        postings = dict(state.postings)
        for term, tf in counts.items():
            entry = postings.get(term, ())
            postings[term] = tuple(sorted(entry + ((doc.id, tf),)))
        doc_lengths = dict(state.doc_lengths)
        doc_lengths[doc.id] = len(tokens)
        documents = dict(state.documents)
        documents[doc.id] = doc
        idx._state = _IndexState(postings=postings, doc_lengths=doc_lengths,
                                 documents=documents)
    return idx


def build_index(docs: Iterable[Document]) -> KnowledgeIndex:
    idx = KnowledgeIndex()
    for doc in docs:
        ingest(doc, idx)
    return idx


def _term_weight(df: int) -> float:
    # Depends on document frequency only; see module docstring.
    return 1.0 / (1.0 + math.log(1.0 + df))


def search(idx: KnowledgeIndex, query: str, k: int = 10) -> list[SearchResult]:
    """Top-k documents by damped-df term weighting, length-normalized.

    Ties break on ascending document id. Only documents containing at least
    one query term are returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = []
    for t in tokenize(query):
        if t not in terms:
            terms.append(t)
    if not terms:
        raise EmptyQuery(query)

    state = idx._state
    scores: dict[str, float] = {}
    matched: dict[str, list[str]] = {}
    for term in terms:
        entry = state.postings.get(term)
        if not entry:
            continue
        w = _term_weight(len(entry))
        for doc_id, tf in entry:
            scores[doc_id] = scores.get(doc_id, 0.0) + tf * w / state.doc_lengths[doc_id]
            matched.setdefault(doc_id, []).append(term)

    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [SearchResult(doc_id=d, score=s, matched_terms=tuple(matched[d]))
            for d, s in ranked]


def save_index(idx: KnowledgeIndex, path: str | Path) -> None:
    state = idx._state
    snapshot = {
        "format_version": SNAPSHOT_FORMAT_VERSION,
        "documents": [
            {"id": d.id, "title": d.title, "body": d.body,
             "source_system": d.source_system, "url": d.url, "tags": list(d.tags)}
            for d in sorted(state.documents.values(), key=lambda d: d.id)
        ],
        "postings": {t: [list(p) for p in e] for t, e in sorted(state.postings.items())},
        "doc_lengths": dict(sorted(state.doc_lengths.items())),
    }
    Path(path).write_text(json.dumps(snapshot, separators=(",", ":"), sort_keys=True),
                          encoding="utf-8")


def load_index(path: str | Path) -> KnowledgeIndex:
    snapshot = json.loads(Path(path).read_text(encoding="utf-8"))
    version = snapshot.get("format_version")
    if version != SNAPSHOT_FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot format version: {version!r}")
    idx = KnowledgeIndex()
    idx._state = _IndexState(
        postings={t: tuple(tuple(p) for p in e) for t, e in snapshot["postings"].items()},
        doc_lengths=snapshot["doc_lengths"],
        documents={
            d["id"]: Document(id=d["id"], title=d["title"], body=d["body"],
                              source_system=d["source_system"], url=d["url"],
                              tags=tuple(d["tags"]))
            for d in snapshot["documents"]
        },
    )
    return idx


def load_documents(source: str | Path) -> list[Document]:
    """Read document records from a .json/.jsonl file or a directory of them."""
    source = Path(source)
    if source.is_file():
        paths = [source]
    else:
        paths = sorted(source.glob("*.json")) + sorted(source.glob("*.jsonl"))
    docs: list[Document] = []
    for path in paths:
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            records = [json.loads(text)]
        else:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
        for rec in records:
            docs.append(Document(
                id=rec["id"], title=rec.get("title", ""), body=rec.get("body", ""),
                source_system=rec.get("source_system", ""), url=rec.get("url", ""),
                tags=tuple(rec.get("tags", ())),
            ))
    return docs
