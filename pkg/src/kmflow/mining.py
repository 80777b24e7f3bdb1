"""Heuristic mining of step logs into dependency graphs and main flows.

The dependency measure between distinct steps a and b is
``(|a>b| - |b>a|) / (|a>b| + |b>a| + 1)`` where ``|a>b|`` counts direct
successions; self-loops use ``|a>a| / (|a>a| + 1)``. Edges survive when the
measure clears an absolute threshold, a minimum observation count, and a
relative-to-best margin against the strongest edge leaving the same step.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import EmptyLog, NoPath
from .trace import Session, TraceEvent


@dataclass(frozen=True)
class StepLog:
    traces: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        for trace in self.traces:
            for label in trace:
                if not label:
                    raise ValueError("step labels must be non-empty")


@dataclass(frozen=True)
class MinerConfig:
    dependency_threshold: float = 0.9
    min_observations: int = 1
    relative_to_best: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.dependency_threshold <= 1.0:
            raise ValueError("dependency_threshold must be in [0, 1]")
        if self.min_observations < 1:
            raise ValueError("min_observations must be >= 1")


@dataclass(frozen=True)
class Edge:
    count: int
    dependency: float


@dataclass(frozen=True)
class DependencyGraph:
    nodes: Mapping[str, int]                      # label -> frequency
    edges: Mapping[tuple[str, str], Edge]
    start_nodes: frozenset[str]
    end_nodes: frozenset[str]


def directly_follows(log: StepLog) -> Counter:
    """Count direct successions |a>b| across all traces."""
    if not log.traces:
        raise EmptyLog("step log has no traces")
    counts: Counter = Counter()
    for trace in log.traces:
        for a, b in zip(trace, trace[1:]):
            counts[(a, b)] += 1
    return counts


def dependency_measure(counts: Mapping[tuple[str, str], int], a: str, b: str) -> float:
    ab = counts.get((a, b), 0)
    if a == b:
        return ab / (ab + 1)
    ba = counts.get((b, a), 0)
    return (ab - ba) / (ab + ba + 1)


def mine_dependency_graph(log: StepLog, cfg: MinerConfig | None = None) -> DependencyGraph:
    cfg = cfg or MinerConfig()
    counts = directly_follows(log)

    nodes: Counter = Counter()
    starts: set[str] = set()
    ends: set[str] = set()
    for trace in log.traces:
        nodes.update(trace)
        if trace:
            starts.add(trace[0])
            ends.add(trace[-1])

    best_out: dict[str, float] = {}
    for (a, b), c in counts.items():
        if a != b and c > 0:
            dep = dependency_measure(counts, a, b)
            if dep > best_out.get(a, float("-inf")):
                best_out[a] = dep

    edges: dict[tuple[str, str], Edge] = {}
    for (a, b), c in sorted(counts.items()):
        if c < cfg.min_observations:
            continue
        dep = dependency_measure(counts, a, b)
        if dep < cfg.dependency_threshold:
            continue
        if a != b and dep < best_out[a] - cfg.relative_to_best:
            continue
        edges[(a, b)] = Edge(count=c, dependency=dep)

    return DependencyGraph(
        nodes=dict(sorted(nodes.items())),
        edges=edges,
        start_nodes=frozenset(starts),
        end_nodes=frozenset(ends),
    )


def extract_main_flow(g: DependencyGraph) -> list[str]:
    """Highest-frequency acyclic start-to-end path.

    Path score is the product of edge counts; ties resolve to the
    lexicographically smallest label sequence. Consecutive duplicate labels
    are collapsed.
    """
    if not g.start_nodes:
        raise NoPath("graph has no start node")
    succ: dict[str, list[tuple[str, int]]] = {}
    for (a, b), e in g.edges.items():
        if a != b:
            succ.setdefault(a, []).append((b, e.count))
    for lst in succ.values():
        lst.sort()

    best: tuple[float, tuple[str, ...]] | None = None

    def consider(path: tuple[str, ...], score: float) -> None:
        nonlocal best
        if best is None or score > best[0] or (score == best[0] and path < best[1]):
            best = (score, path)

    def walk(node: str, path: tuple[str, ...], score: float, seen: frozenset[str]) -> None:
        if node in g.end_nodes:
            consider(path, score)
        for nxt, count in succ.get(node, ()):
            if nxt in seen:
                continue
            walk(nxt, path + (nxt,), score * count, seen | {nxt})

    for start in sorted(g.start_nodes):
        if start not in g.nodes:
            continue
        walk(start, (start,), 1.0, frozenset({start}))

    if best is None:
        raise NoPath("no start-to-end path in dependency graph")
    flow: list[str] = []
    for label in best[1]:
        if not flow or flow[-1] != label:
            flow.append(label)
    return flow


def edge_list_text(g: DependencyGraph) -> str:
    """Plain-text edge list (a, b, count, dependency) for inspection."""
    lines = ["# a\tb\tcount\tdependency"]
    for (a, b), e in sorted(g.edges.items()):
        lines.append(f"{a}\t{b}\t{e.count}\t{e.dependency:.6f}")
    return "\n".join(lines) + "\n"


def canonical_step_label(ev: TraceEvent) -> str:
    """action:target when a target exists, else action:url-path."""
    if ev.target:
        return f"{ev.action}:{ev.target}"
    url = ev.url
    for sep in ("://",):
        if sep in url:
            url = url.split(sep, 1)[1]
    path = "/" + url.split("/", 1)[1] if "/" in url else "/"
    return f"{ev.action}:{path}"


_STEP_ACTIONS = frozenset({"navigation", "click", "type", "select", "submit"})


def step_log_from_sessions(sessions: Iterable[Session],
                           step_actions: frozenset[str] = _STEP_ACTIONS) -> StepLog:
    """Canonicalize expert sessions into mineable step traces."""
    traces: list[tuple[str, ...]] = []
    for s in sessions:
        labels = [canonical_step_label(ev) for ev in s.events if ev.action in step_actions]
        if labels:
            traces.append(tuple(labels))
    if not traces:
        raise EmptyLog("no step traces derived from sessions")
    return StepLog(traces=tuple(traces))
