import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptcl.graph import Event, build_graph, graph_from_arrays, split_nodes, temporal_distance


def toy_events():
    return [
        Event(0, 1, 1.0, np.array([1.0, 0.0])),
        Event(1, 2, 2.0, np.array([0.0, 1.0])),
        Event(0, 2, 3.0, np.array([1.0, 1.0])),
    ]


def brute_distance(times_of_node, t):
    return sum(1 for x in set(times_of_node) if x > t)


class TestBuildGraph:
    def test_timelines_match_event_scan(self):
        g = build_graph(toy_events(), None, class_count=2)
        # node 0 appears at t=1 and t=3
        assert g.timeline(0).tolist() == [1.0, 3.0]
        assert g.timeline(1).tolist() == [1.0, 2.0]
        assert g.timeline(2).tolist() == [2.0, 3.0]

    def test_single_event_final_timestamps(self):
        g = build_graph([Event(0, 1, 5.0)], None, class_count=2)
        assert g.final_timestamp(0) == 5.0
        assert g.final_timestamp(1) == 5.0

    def test_unsorted_input_is_resorted(self):
        g = build_graph([Event(0, 1, 2.0), Event(1, 2, 1.0)], None, class_count=2)
        assert g.timestamps.tolist() == [1.0, 2.0]
        assert g.sources.tolist() == [1, 0]

    def test_negative_timestamp_rejected(self):
        with pytest.raises(ValueError):
            build_graph([Event(0, 1, -1.0)], None, class_count=2)

    def test_feature_dim_mismatch_rejected(self):
        events = [Event(0, 1, 1.0, np.array([1.0])), Event(1, 2, 2.0, np.array([1.0, 2.0]))]
        with pytest.raises(ValueError):
            build_graph(events, None, class_count=2)

    def test_rebuild_is_idempotent(self):
        g = build_graph(toy_events(), None, class_count=2)
        g2 = build_graph(g.events(), None, class_count=2)
        assert np.array_equal(g.timestamps, g2.timestamps)
        assert np.array_equal(g.sources, g2.sources)
        assert np.array_equal(g.destinations, g2.destinations)
        for u in range(g.node_count):
            assert np.array_equal(g.timeline(u), g2.timeline(u))

    def test_stable_tiebreak_on_equal_timestamps(self):
        events = [Event(0, 1, 1.0), Event(2, 3, 1.0), Event(1, 3, 0.5)]
        g = build_graph(events, None, class_count=2)
        # tied events keep input order; the t=0.5 event moves to the front
        assert g.sources.tolist() == [1, 0, 2]

    def test_non_attributed_graph_gets_zero_features(self):
        g = build_graph(toy_events()[:1], None, class_count=2)
        assert g.node_features.shape == (2, 0)


class TestTemporalDistance:
    def test_four_timestamp_ladder(self):
        events = [Event(0, 1, t) for t in (1.0, 2.0, 3.0, 4.0)]
        g = build_graph(events, None, class_count=2)
        assert [temporal_distance(g, 0, t) for t in (1.0, 2.0, 3.0, 4.0)] == [3, 2, 1, 0]

    def test_single_timestamp_distance_zero(self):
        g = build_graph([Event(0, 1, 7.0)], None, class_count=2)
        assert temporal_distance(g, 0, 7.0) == 0

    def test_tied_timestamps_share_distance(self):
        # node 0 participates twice at t=1 (two events), then at t=2
        events = [Event(0, 1, 1.0), Event(0, 2, 1.0), Event(0, 1, 2.0)]
        g = build_graph(events, None, class_count=2)
        assert temporal_distance(g, 0, 1.0) == brute_distance([1.0, 1.0, 2.0], 1.0) == 1

    def test_unknown_timestamp_rejected(self):
        g = build_graph([Event(0, 1, 1.0)], None, class_count=2)
        with pytest.raises(ValueError):
            temporal_distance(g, 0, 0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(min_value=0, max_value=30), min_size=1, max_size=40))
    def test_matches_brute_force_on_random_timelines(self, raw_times):
        times = [float(t) for t in raw_times]
        events = [Event(0, 1, t) for t in times]
        g = build_graph(events, None, class_count=2)
        for t in set(times):
            assert temporal_distance(g, 0, t) == brute_distance(times, t)

    def test_distances_biject_onto_prefix_when_distinct(self):
        rng = np.random.default_rng(3)
        times = rng.permutation(20).astype(float)
        g = build_graph([Event(0, 1, t) for t in times], None, class_count=2)
        ds = sorted(temporal_distance(g, 0, t) for t in times)
        assert ds == list(range(20))


def drift_like_graph(n_nodes=40, n_events=400, seed=0):
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_nodes, n_events)
    dst = (src + 1 + rng.integers(0, n_nodes - 1, n_events)) % n_nodes
    ts = np.sort(rng.uniform(0, 100, n_events))
    return graph_from_arrays(src, dst, ts, node_count=n_nodes)


class TestSplitNodes:
    def test_chronological_sizes(self):
        g = drift_like_graph(100, 2000, seed=1)
        labels = {u: u % 2 for u in range(100) if g.has_events(u)}
        n = len(labels)
        split = split_nodes(g, labels, seed=0, mode="chronological")
        assert split.val_nodes.size == int(np.floor(0.15 * n))
        assert split.test_nodes.size == int(np.floor(0.15 * n))
        assert split.train_nodes.size == n - split.val_nodes.size - split.test_nodes.size

    def test_too_few_nodes_rejected(self):
        g = drift_like_graph(10, 50)
        with pytest.raises(ValueError):
            split_nodes(g, {0: 0, 1: 1})

    def test_boundary_is_strict_for_val_and_test(self):
        g = drift_like_graph(80, 1500, seed=2)
        labels = {u: u % 2 for u in range(80) if g.has_events(u)}
        for mode in ("chronological", "stratified"):
            split = split_nodes(g, labels, seed=4, mode=mode)
            for u in np.concatenate([split.val_nodes, split.test_nodes]):
                assert g.final_timestamp(int(u)) > split.boundary_time
            for u in split.train_nodes:
                assert g.final_timestamp(int(u)) <= split.boundary_time

    def test_sets_disjoint_and_cover_labeled(self):
        g = drift_like_graph(60, 900, seed=5)
        labels = {u: u % 3 for u in range(60) if g.has_events(u)}
        split = split_nodes(g, labels, seed=0, mode="stratified")
        all_nodes = split.labeled_nodes()
        assert len(set(all_nodes.tolist())) == all_nodes.size == len(labels)
        assert set(all_nodes.tolist()) == set(labels)

    def test_deterministic_given_seed(self):
        g = drift_like_graph(60, 900, seed=6)
        labels = {u: u % 2 for u in range(60) if g.has_events(u)}
        for mode in ("chronological", "stratified"):
            a = split_nodes(g, labels, seed=9, mode=mode)
            b = split_nodes(g, labels, seed=9, mode=mode)
            assert np.array_equal(a.train_nodes, b.train_nodes)
            assert np.array_equal(a.val_nodes, b.val_nodes)
            assert np.array_equal(a.test_nodes, b.test_nodes)
            assert a.boundary_time == b.boundary_time

    def test_bad_ratios_rejected(self):
        g = drift_like_graph(30, 300)
        labels = {u: 0 for u in range(30) if g.has_events(u)}
        with pytest.raises(ValueError):
            split_nodes(g, labels, ratios=(0.5, 0.2, 0.2))
