import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmflow.errors import EmptyLog, NoPath
from kmflow.mining import (DependencyGraph, Edge, MinerConfig, StepLog,
                           canonical_step_label, dependency_measure,
                           directly_follows, edge_list_text, extract_main_flow,
                           mine_dependency_graph, step_log_from_sessions)

from .conftest import make_event, make_session


def log(*traces):
    return StepLog(traces=tuple(tuple(t) for t in traces))


TOY = log(*([("a", "b", "c")] * 10), ("a", "c"))


class TestDirectlyFollows:
    def test_hand_enumeration(self):
        counts = directly_follows(log(*[("a", "b", "c")] * 3))
        assert counts[("a", "b")] == 3
        assert counts[("b", "c")] == 3
        assert counts[("a", "c")] == 0

    def test_single_step_trace(self):
        assert directly_follows(log(("a",))) == {}

    def test_self_loop(self):
        assert directly_follows(log(("a", "a")))[("a", "a")] == 1

    def test_empty_log(self):
        with pytest.raises(EmptyLog):
            directly_follows(log())

    def test_empty_labels_rejected(self):
        with pytest.raises(ValueError):
            log(("a", ""))


class TestDependencyMeasure:
    def test_one_sided(self):
        assert dependency_measure({("a", "b"): 3}, "a", "b") == pytest.approx(0.75)

    def test_antisymmetric_counts_cancel(self):
        counts = {("a", "b"): 5, ("b", "a"): 5}
        assert dependency_measure(counts, "a", "b") == 0.0

    def test_zero(self):
        assert dependency_measure({}, "a", "a") == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 50), st.integers(0, 50))
    def test_antisymmetry_and_open_interval(self, ab, ba):
        counts = {("a", "b"): ab, ("b", "a"): ba}
        d = dependency_measure(counts, "a", "b")
        assert d == -dependency_measure(counts, "b", "a")
        assert -1.0 < d < 1.0


class TestMine:
    def test_toy_log_thresholding(self):
        g = mine_dependency_graph(TOY, MinerConfig(dependency_threshold=0.9))
        assert g.edges[("a", "b")].dependency == pytest.approx(10 / 11, abs=1e-12)
        assert g.edges[("b", "c")].dependency == pytest.approx(10 / 11, abs=1e-12)
        assert ("a", "c") not in g.edges  # dep 1/2 pruned
        assert g.start_nodes == {"a"} and g.end_nodes == {"c"}

    def test_single_label(self):
        g = mine_dependency_graph(log(*[("a",)] * 5))
        assert list(g.nodes) == ["a"]
        assert not g.edges

    def test_min_observations_gate(self):
        g = mine_dependency_graph(log(("a", "b")), MinerConfig(
            dependency_threshold=0.0, min_observations=2))
        assert not g.edges

    def test_relative_to_best_prunes_weak_branch(self):
        traces = [("a", "b")] * 30 + [("a", "c")] * 3
        g = mine_dependency_graph(log(*traces), MinerConfig(
            dependency_threshold=0.5, relative_to_best=0.05))
        assert ("a", "b") in g.edges
        assert ("a", "c") not in g.edges  # 0.75 < 30/31 - 0.05

    def test_threshold_monotonicity(self):
        traces = [("a", "b", "c")] * 10 + [("a", "c")] * 2 + [("b", "a")]
        lo = mine_dependency_graph(log(*traces), MinerConfig(dependency_threshold=0.3))
        hi = mine_dependency_graph(log(*traces), MinerConfig(dependency_threshold=0.8))
        assert set(hi.edges) <= set(lo.edges)

    def test_duplication_invariance(self):
        traces = [("a", "b", "c")] * 4 + [("a", "c")]
        once = mine_dependency_graph(log(*traces), MinerConfig(dependency_threshold=0.6))
        tripled = mine_dependency_graph(log(*(traces * 3)),
                                        MinerConfig(dependency_threshold=0.6))
        # duplicating every trace k-fold strengthens dependencies, never
        # removes a kept edge
        assert set(once.edges) <= set(tripled.edges)


class TestMainFlow:
    def test_toy_flow(self):
        g = mine_dependency_graph(TOY, MinerConfig(dependency_threshold=0.9))
        assert extract_main_flow(g) == ["a", "b", "c"]

    def test_single_node(self):
        g = mine_dependency_graph(log(*[("a",)] * 5))
        assert extract_main_flow(g) == ["a"]

    def test_lexicographic_tie_break(self):
        g = DependencyGraph(
            nodes={"a": 2, "b": 1, "c": 1, "d": 2},
            edges={("a", "b"): Edge(2, 0.9), ("a", "c"): Edge(2, 0.9),
                   ("b", "d"): Edge(2, 0.9), ("c", "d"): Edge(2, 0.9)},
            start_nodes=frozenset({"a"}), end_nodes=frozenset({"d"}))
        assert extract_main_flow(g) == ["a", "b", "d"]

    def test_no_path(self):
        g = DependencyGraph(nodes={"a": 1, "b": 1}, edges={},
                            start_nodes=frozenset({"a"}),
                            end_nodes=frozenset({"b"}))
        with pytest.raises(NoPath):
            extract_main_flow(g)

    def test_flow_is_a_path_in_the_graph(self):
        traces = [("a", "b", "c", "d")] * 8 + [("a", "c", "d")] * 2
        g = mine_dependency_graph(log(*traces), MinerConfig(dependency_threshold=0.5))
        flow = extract_main_flow(g)
        for pair in itertools.pairwise(flow):
            assert pair in g.edges


class TestLabelsAndExport:
    def test_canonical_label_prefers_target(self):
        ev = make_event(0, "click", target="save-button")
        assert canonical_step_label(ev) == "click:save-button"

    def test_canonical_label_url_path(self):
        ev = make_event(0, "navigation", url="https://lms.example/grade/items")
        assert canonical_step_label(ev) == "navigation:/grade/items"

    def test_step_log_from_sessions(self):
        s = make_session([
            make_event(0, "navigation", target="open"),
            make_event(1000, "response"),          # not a step action
            make_event(2000, "type", target="name"),
        ])
        log_ = step_log_from_sessions([s])
        assert log_.traces == (("navigation:open", "type:name"),)

    def test_edge_list_text(self):
        g = mine_dependency_graph(TOY, MinerConfig(dependency_threshold=0.9))
        text = edge_list_text(g)
        assert "a\tb\t10\t0.909091" in text
