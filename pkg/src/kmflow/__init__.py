"""kmflow: knowledge-workflow mining and recommendation toolkit.

Subsystems: trace parsing and validation (`trace`), knowledge-management
coding (`coding`), heuristic process mining (`mining`), step-guide building
and rendering (`shareflow`), lexical retrieval (`repository`), context-aware
push recommendation (`recommend`), co-occurrence network embedding (`ena`),
regression and survey scoring (`stats`), evaluation metrics and reports
(`harness`), synthetic corpora (`simulate`), and the batch pipeline and HTTP
service (`pipeline`, `service`, `cli`).
"""

from .coding import ALL_CODES, CodedLine, CoderConfig, KMCode, code_corpus, code_session
from .trace import (Corpus, Session, TraceEvent, parse_trace_log,
                    segment_sessions, serialize_trace_log, validate_corpus)

__version__ = "0.1.0"

__all__ = [
    "ALL_CODES", "CodedLine", "CoderConfig", "KMCode", "code_corpus",
    "code_session", "Corpus", "Session", "TraceEvent", "parse_trace_log",
    "segment_sessions", "serialize_trace_log", "validate_corpus",
    "__version__",
]
