"""Event-stream data model: chronological event store, per-node timelines,
temporal distances and final-timestamp node splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Event:
    """One timestamped interaction between two nodes.

    ``event_index`` is the ordinal position in the chronological stream; it
    may be left as None on input and is assigned by :func:`build_graph`.
    """

    source: int
    destination: int
    timestamp: float
    edge_features: Optional[np.ndarray] = None
    event_index: Optional[int] = None


class DynamicGraph:
    """Immutable, chronologically sorted event store.

    Events are held column-wise (sources, destinations, timestamps, edge
    features) and indexed per node:

    - ``timeline(u)``: the sorted distinct timestamps at which u participates
      in any event
    - ``final_timestamp(u)``: the last such timestamp
    - ``adjacency(u)``: event positions involving u, sorted ascending by
      (timestamp, event_index), used by the neighbor samplers

    All arrays are read-only after construction; concurrent reads are safe.
    """

    def __init__(self, sources, destinations, timestamps, edge_features,
                 node_features, class_count: int):
        self.sources = sources
        self.destinations = destinations
        self.timestamps = timestamps
        self.edge_features = edge_features
        self.node_features = node_features
        self.node_count = int(node_features.shape[0])
        self.class_count = int(class_count)
        self.event_count = int(sources.shape[0])

        self._timelines: list[np.ndarray] = [None] * self.node_count
        self._adjacency: list[np.ndarray] = [None] * self.node_count
        self._adjacency_times: list[np.ndarray] = [None] * self.node_count
        self._build_node_index()

        for arr in (self.sources, self.destinations, self.timestamps,
                    self.edge_features, self.node_features):
            arr.setflags(write=False)

    def _build_node_index(self):
        buckets: list[list[int]] = [[] for _ in range(self.node_count)]
        for pos in range(self.event_count):
            buckets[self.sources[pos]].append(pos)
            buckets[self.destinations[pos]].append(pos)
        empty = np.empty(0, dtype=np.float64)
        for u, positions in enumerate(buckets):
            if not positions:
                self._timelines[u] = empty
                self._adjacency[u] = np.empty(0, dtype=np.int64)
                self._adjacency_times[u] = empty
                continue
            pos_arr = np.asarray(positions, dtype=np.int64)
            times = self.timestamps[pos_arr]
            # events are stored sorted by (timestamp, event_index), so the
            # per-node position list is already in adjacency order
            self._adjacency[u] = pos_arr
            self._adjacency_times[u] = times
            self._timelines[u] = np.unique(times)
            for arr in (self._adjacency[u], self._adjacency_times[u],
                        self._timelines[u]):
                arr.setflags(write=False)

    def timeline(self, u: int) -> np.ndarray:
        """Sorted distinct timestamps of node u's events."""
        return self._timelines[u]

    def final_timestamp(self, u: int) -> float:
        tl = self._timelines[u]
        if tl.size == 0:
            raise ValueError(f"node {u} has no events")
        return float(tl[-1])

    def has_events(self, u: int) -> bool:
        return self._timelines[u].size > 0

    def adjacency(self, u: int):
        """(event positions, event times) of node u, ascending by
        (timestamp, event_index)."""
        return self._adjacency[u], self._adjacency_times[u]

    def events(self) -> list[Event]:
        """Materialize the stored stream as Event objects (stored order)."""
        return [
            Event(source=int(self.sources[i]),
                  destination=int(self.destinations[i]),
                  timestamp=float(self.timestamps[i]),
                  edge_features=self.edge_features[i].copy(),
                  event_index=i)
            for i in range(self.event_count)
        ]

    @property
    def edge_feature_dim(self) -> int:
        return int(self.edge_features.shape[1])

    @property
    def node_feature_dim(self) -> int:
        return int(self.node_features.shape[1])


def build_graph(events: Sequence[Event], node_features: Optional[np.ndarray],
                class_count: int, node_count: Optional[int] = None) -> DynamicGraph:
    """Build an immutable :class:`DynamicGraph` from an event sequence.

    Events are stably re-sorted by (timestamp, input order) and re-indexed so
    that ``event_index`` equals the stored position. Node ids must be dense
    integers; ``node_count`` defaults to (max id + 1) or the feature table
    length. Missing node/edge features become zero vectors.

    Raises ValueError on negative timestamps, inconsistent edge-feature
    dimensions, or out-of-range node ids.
    """
    if len(events) == 0:
        raise ValueError("event sequence must be non-empty")

    n = len(events)
    sources = np.empty(n, dtype=np.int64)
    destinations = np.empty(n, dtype=np.int64)
    timestamps = np.empty(n, dtype=np.float64)
    feat_dim = None
    for i, ev in enumerate(events):
        if ev.timestamp < 0:
            raise ValueError(f"negative timestamp {ev.timestamp} at input position {i}")
        sources[i] = ev.source
        destinations[i] = ev.destination
        timestamps[i] = ev.timestamp
        if ev.edge_features is not None:
            d = int(np.asarray(ev.edge_features).shape[0])
            if feat_dim is None:
                feat_dim = d
            elif feat_dim != d:
                raise ValueError(
                    f"edge feature dimension mismatch: {d} at input position {i}, expected {feat_dim}")

    max_id = int(max(sources.max(), destinations.max()))
    if node_count is None:
        node_count = node_features.shape[0] if node_features is not None else max_id + 1
    if max_id >= node_count or min(sources.min(), destinations.min()) < 0:
        raise ValueError("node ids must be dense integers in [0, node_count)")

    if feat_dim is None:
        feat_dim = 0
    edge_features = np.zeros((n, feat_dim), dtype=np.float32)
    if feat_dim:
        for i, ev in enumerate(events):
            if ev.edge_features is not None:
                edge_features[i] = np.asarray(ev.edge_features, dtype=np.float32)

    if node_features is None:
        node_features = np.zeros((node_count, 0), dtype=np.float32)
    else:
        node_features = np.asarray(node_features, dtype=np.float32)
        if node_features.shape[0] != node_count:
            raise ValueError("node_features length must equal node_count")

    if class_count < 1:
        raise ValueError("class_count must be positive")

    # stable sort on timestamp keeps the input order within ties, which then
    # becomes the stored event_index tiebreak
    order = np.argsort(timestamps, kind="stable")
    return DynamicGraph(
        sources=sources[order],
        destinations=destinations[order],
        timestamps=timestamps[order],
        edge_features=edge_features[order],
        node_features=node_features,
        class_count=class_count,
    )


def graph_from_arrays(sources, destinations, timestamps, edge_features=None,
                      node_features=None, class_count: int = 2,
                      node_count: Optional[int] = None) -> DynamicGraph:
    """Columnar counterpart of :func:`build_graph` (same validation/sorting)."""
    sources = np.asarray(sources, dtype=np.int64)
    destinations = np.asarray(destinations, dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if not (sources.shape == destinations.shape == timestamps.shape) or sources.ndim != 1:
        raise ValueError("source/destination/timestamp columns must be equal-length 1-d arrays")
    if sources.size == 0:
        raise ValueError("event sequence must be non-empty")
    if timestamps.min() < 0:
        raise ValueError("negative timestamp")

    max_id = int(max(sources.max(), destinations.max()))
    if node_count is None:
        node_count = node_features.shape[0] if node_features is not None else max_id + 1
    if max_id >= node_count or min(sources.min(), destinations.min()) < 0:
        raise ValueError("node ids must be dense integers in [0, node_count)")

    if edge_features is None:
        edge_features = np.zeros((sources.size, 0), dtype=np.float32)
    else:
        edge_features = np.asarray(edge_features, dtype=np.float32)
        if edge_features.shape[0] != sources.size:
            raise ValueError("edge_features row count must equal event count")
    if node_features is None:
        node_features = np.zeros((node_count, 0), dtype=np.float32)
    else:
        node_features = np.asarray(node_features, dtype=np.float32)
        if node_features.shape[0] != node_count:
            raise ValueError("node_features length must equal node_count")
    if class_count < 1:
        raise ValueError("class_count must be positive")

    order = np.argsort(timestamps, kind="stable")
    return DynamicGraph(sources[order], destinations[order], timestamps[order],
                        edge_features[order], node_features, class_count)


def temporal_distance(graph: DynamicGraph, u: int, t: float) -> int:
    """Number of node u's distinct timestamps strictly later than t.

    The final timestamp has distance 0; t must be one of u's timestamps.
    """
    tl = graph.timeline(u)
    idx = np.searchsorted(tl, t)
    if idx == tl.size or tl[idx] != t:
        raise ValueError(f"timestamp {t} not in the timeline of node {u}")
    return int(tl.size - np.searchsorted(tl, t, side="right"))


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/val/test node sets with the boundary time separating
    the training-visible past (train finals) from the evaluation future."""

    train_nodes: np.ndarray
    val_nodes: np.ndarray
    test_nodes: np.ndarray
    boundary_time: float

    def labeled_nodes(self) -> np.ndarray:
        return np.concatenate([self.train_nodes, self.val_nodes, self.test_nodes])

    def to_dict(self) -> dict:
        return {
            "train_nodes": [int(u) for u in self.train_nodes],
            "val_nodes": [int(u) for u in self.val_nodes],
            "test_nodes": [int(u) for u in self.test_nodes],
            "boundary_time": float(self.boundary_time),
        }

    @staticmethod
    def from_dict(d: dict) -> "SplitSpec":
        return SplitSpec(
            train_nodes=np.asarray(d["train_nodes"], dtype=np.int64),
            val_nodes=np.asarray(d["val_nodes"], dtype=np.int64),
            test_nodes=np.asarray(d["test_nodes"], dtype=np.int64),
            boundary_time=float(d["boundary_time"]),
        )


def split_nodes(graph: DynamicGraph, labels: dict[int, int] | np.ndarray,
                ratios=(0.70, 0.15, 0.15), seed: int = 0,
                mode: Literal["chronological", "stratified"] = "chronological") -> SplitSpec:
    """Partition labeled nodes into train/val/test by their final timestamps.

    chronological: sort by final timestamp and cut at the ratio quantiles
    (floor sizes for val/test, remainder to train); ties at the train cut are
    pulled into train so every val/test node ends strictly after the boundary.

    stratified: the boundary constraint (every val/test final strictly after
    the boundary, boundary = max train final) forces the train set to be the
    same closed chronological prefix, so stratification applies to the
    remainder: a per-class seeded shuffle assigns the post-boundary nodes to
    val/test with per-class counts preserved within one.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive and sum to 1")

    if isinstance(labels, np.ndarray):
        labeled = np.flatnonzero(labels >= 0)
        label_of = {int(u): int(labels[u]) for u in labeled}
    else:
        label_of = {int(u): int(y) for u, y in labels.items()}
        labeled = np.asarray(sorted(label_of), dtype=np.int64)
    if labeled.size < 3:
        raise ValueError("need at least 3 labeled nodes to split")
    for u in labeled:
        if not graph.has_events(int(u)):
            raise ValueError(f"labeled node {u} has no events, so no final timestamp")

    finals = np.asarray([graph.final_timestamp(int(u)) for u in labeled])
    n = labeled.size
    n_val = int(np.floor(ratios[1] * n))
    n_test = int(np.floor(ratios[2] * n))
    n_train = n - n_val - n_test

    order = np.lexsort((labeled, finals))
    nodes = labeled[order]
    times = finals[order]
    cut = n_train
    # swallow ties at the cut so the boundary strictly precedes val/test
    while cut < n and times[cut] == times[cut - 1]:
        cut += 1
    if cut >= n - 1:
        raise ValueError("final timestamps too tied to produce non-empty val/test splits")
    train = nodes[:cut]
    rest = nodes[cut:]
    boundary = float(times[cut - 1])

    if mode == "chronological":
        rest_val = int(round(n_val / (n_val + n_test) * rest.size))
        rest_val = min(max(rest_val, 1), rest.size - 1)
        val, test = rest[:rest_val], rest[rest_val:]
    elif mode == "stratified":
        rng = np.random.default_rng(seed)
        shuffled = rest[rng.permutation(rest.size)]
        by_class: dict[int, list[int]] = {}
        for u in shuffled:
            by_class.setdefault(label_of[int(u)], []).append(int(u))
        val_l: list[int] = []
        test_l: list[int] = []
        val_share = n_val / (n_val + n_test)
        for cls in sorted(by_class):
            members = by_class[cls]
            m_val = int(round(val_share * len(members)))
            val_l += members[:m_val]
            test_l += members[m_val:]
        if not val_l or not test_l:  # rebalance degenerate class layouts
            pool = sorted(val_l + test_l)
            m_val = min(max(int(round(val_share * len(pool))), 1), len(pool) - 1)
            val_l, test_l = pool[:m_val], pool[m_val:]
        val = np.asarray(sorted(val_l), dtype=np.int64)
        test = np.asarray(sorted(test_l), dtype=np.int64)
    else:
        raise ValueError(f"unknown split mode: {mode!r}")

    return SplitSpec(train_nodes=np.asarray(train, dtype=np.int64),
                     val_nodes=np.asarray(val, dtype=np.int64),
                     test_nodes=np.asarray(test, dtype=np.int64),
                     boundary_time=boundary)
