"""Dataset loaders and the synthetic drift-graph generator.

Three sources produce one shape, :class:`LabeledDataset`: bipartite
interaction CSVs (user,item,timestamp,state_label,features...), a generic
edge-list directory (edges.csv / nodes.csv / labels.csv), and a seeded
generator whose nodes carry a latent class that occasionally flips, giving
ground-truth dynamic labels for verification at desk scale.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import DynamicGraph, graph_from_arrays


@dataclass
class DatasetMeta:
    name: str
    class_count: int
    bipartite: bool = False


@dataclass
class LabeledDataset:
    """A dynamic graph plus its label views.

    ``final_labels[u]`` is the class at node u's final timestamp, -1 where
    unlabeled (items in bipartite graphs, background nodes). Optional
    ``dynamic_labels`` maps (node, timestamp) to the class at that time, for
    supervised baselines and oracle checks only.
    """

    graph: DynamicGraph
    final_labels: np.ndarray
    dynamic_labels: Optional[dict[tuple[int, float], int]]
    metadata: DatasetMeta

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.final_labels >= 0)

    def labels_dict(self) -> dict[int, int]:
        return {int(u): int(self.final_labels[u]) for u in self.labeled_nodes()}

    def without_dynamic_labels(self) -> "LabeledDataset":
        return LabeledDataset(self.graph, self.final_labels, None, self.metadata)

    def validate(self):
        for u in self.labeled_nodes():
            if not self.graph.has_events(int(u)):
                raise ValueError(f"labeled node {u} has no events")
        if self.dynamic_labels is not None:
            nodes_seen = {u for (u, _) in self.dynamic_labels}
            for u in nodes_seen:
                for t in self.graph.timeline(int(u)):
                    if (int(u), float(t)) not in self.dynamic_labels:
                        raise ValueError(
                            f"dynamic labels of node {u} do not cover timestamp {t}")
            for u in self.labeled_nodes():
                key = (int(u), self.graph.final_timestamp(int(u)))
                if key in self.dynamic_labels and self.dynamic_labels[key] != self.final_labels[u]:
                    raise ValueError(f"final label of node {u} disagrees with its "
                                     "dynamic label at the final timestamp")


def load_jodie_csv(path: str, name: Optional[str] = None,
                   class_count: int = 2) -> LabeledDataset:
    """Bipartite interaction CSV: header row, then
    ``user_id,item_id,timestamp,state_label,f1,...``.

    Item node ids are offset past the user id range; users get dynamic labels
    from the per-event state label and a final label from the last one; items
    stay unlabeled.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    users, items, times, states = [], [], [], []
    feats: list[np.ndarray] = []
    feat_dim = None
    with open(path) as fh:
        fh.readline()  # header
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                u = int(float(parts[0]))
                v = int(float(parts[1]))
                t = float(parts[2])
                y = int(float(parts[3]))
                f = np.asarray([float(x) for x in parts[4:]], dtype=np.float32)
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if feat_dim is None:
                feat_dim = f.shape[0]
            elif f.shape[0] != feat_dim:
                raise ValueError(
                    f"{path}:{lineno}: feature arity {f.shape[0]} != {feat_dim}")
            users.append(u)
            items.append(v)
            times.append(t)
            states.append(y)
            feats.append(f)
    if not users:
        raise ValueError(f"{path}: no event rows")

    user_ids = np.asarray(users, dtype=np.int64)
    item_ids = np.asarray(items, dtype=np.int64)
    uniq_users = np.unique(user_ids)
    uniq_items = np.unique(item_ids)
    user_map = {int(raw): i for i, raw in enumerate(uniq_users)}
    item_map = {int(raw): len(uniq_users) + i for i, raw in enumerate(uniq_items)}
    src = np.asarray([user_map[int(u)] for u in user_ids], dtype=np.int64)
    dst = np.asarray([item_map[int(v)] for v in item_ids], dtype=np.int64)
    node_count = len(uniq_users) + len(uniq_items)

    graph = graph_from_arrays(src, dst, np.asarray(times, dtype=np.float64),
                              np.stack(feats), node_features=None,
                              class_count=class_count, node_count=node_count)

    dynamic: dict[tuple[int, float], int] = {}
    for u, t, y in zip(src, times, states):
        dynamic[(int(u), float(t))] = int(y)
    final = np.full(node_count, -1, dtype=np.int64)
    for u in range(len(uniq_users)):
        final[u] = dynamic[(u, graph.final_timestamp(u))]

    meta = DatasetMeta(name=name or os.path.splitext(os.path.basename(path))[0],
                       class_count=class_count, bipartite=True)
    ds = LabeledDataset(graph, final, dynamic, meta)
    ds.validate()
    return ds


def load_generic(path: str, name: Optional[str] = None) -> LabeledDataset:
    """Generic directory loader: ``edges.csv`` (src,dst,t,features...),
    ``nodes.csv`` (id,features...), ``labels.csv`` (id,label[,t]).

    Nodes present in nodes.csv but absent from labels.csv are background:
    loaded for structure, excluded from supervision and metrics. A labels
    file with a timestamp column carries dynamic labels; finals are read at
    each node's final timestamp.
    """
    edges_path = os.path.join(path, "edges.csv")
    nodes_path = os.path.join(path, "nodes.csv")
    labels_path = os.path.join(path, "labels.csv")
    for p in (edges_path, nodes_path, labels_path):
        if not os.path.exists(p):
            raise FileNotFoundError(p)

    node_feats: list[np.ndarray] = []
    ids: list[int] = []
    with open(nodes_path) as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            ids.append(int(float(parts[0])))
            node_feats.append(np.asarray([float(x) for x in parts[1:]], dtype=np.float32))
    if ids != list(range(len(ids))):
        raise ValueError(f"{nodes_path}: node ids must be dense 0..n-1")
    node_features = np.stack(node_feats) if node_feats else None
    node_count = len(ids)

    src_l, dst_l, t_l, ef_l = [], [], [], []
    with open(edges_path) as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                s, d, t = int(float(parts[0])), int(float(parts[1])), float(parts[2])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{edges_path}:{lineno}: malformed row ({exc})") from exc
            if not (0 <= s < node_count and 0 <= d < node_count):
                raise ValueError(f"{edges_path}:{lineno}: edge references unknown node")
            src_l.append(s)
            dst_l.append(d)
            t_l.append(t)
            ef_l.append(np.asarray([float(x) for x in parts[3:]], dtype=np.float32))

    edge_features = np.stack(ef_l) if ef_l and ef_l[0].size else None

    final = np.full(node_count, -1, dtype=np.int64)
    dynamic: dict[tuple[int, float], int] = {}
    has_dynamic = False
    with open(labels_path) as fh:
        header = fh.readline().strip().split(",")
        has_dynamic = len(header) >= 3
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            u, y = int(float(parts[0])), int(float(parts[1]))
            if not 0 <= u < node_count:
                raise ValueError(f"{labels_path}:{lineno}: label references unknown node")
            if len(parts) >= 3:
                dynamic[(u, float(parts[2]))] = y
            else:
                final[u] = y

    if has_dynamic:
        # the final label is the dynamic label at each node's last event time
        last: dict[int, float] = {}
        for (u, t) in dynamic:
            if u not in last or t > last[u]:
                last[u] = t
        for u, t in last.items():
            final[u] = dynamic[(u, t)]
    labeled = final >= 0
    if not labeled.any():
        raise ValueError(f"{labels_path}: no labeled nodes")
    class_count = max(int(final[labeled].max()) + 1, 2)

    graph = graph_from_arrays(src_l, dst_l, t_l, edge_features, node_features,
                              class_count=class_count, node_count=node_count)
    meta = DatasetMeta(name=name or os.path.basename(os.path.normpath(path)),
                       class_count=class_count, bipartite=False)
    ds = LabeledDataset(graph, final, dynamic if has_dynamic else None, meta)
    ds.validate()
    return ds


# alias matching the published dataset family this loader serves
load_dsub_like = load_generic


@dataclass
class DriftConfig:
    """Synthetic generator knobs.

    Each node carries a latent class; per event, with ``switch_probability``
    one participating endpoint flips to another class after the event is
    recorded. Endpoints are drawn with a homophily bias on current classes;
    features are class centroids (scaled by ``signal_scale``) plus Gaussian
    noise. Nodes are active only inside a per-node window covering an
    ``activity_span`` fraction of the stream, so final timestamps spread over
    the whole duration instead of piling up at the end.
    """

    node_count: int = 2000
    event_count: int = 40000
    class_count: int = 2
    switch_probability: float = 0.02
    homophily: float = 0.8
    feature_noise: float = 0.5
    seed: int = 0
    feature_dim: int = 8
    signal_scale: float = 0.3         # edge-feature centroid magnitude
    node_signal_scale: float = 0.3    # node-feature centroid magnitude
    activity_span: tuple[float, float] = (0.1, 0.5)
    onset_bias: float = 0.95          # chance a flip targets a lowest-class participant
    initial_class_weights: Optional[tuple[float, ...]] = None  # None = onset-heavy

    def __post_init__(self):
        if self.node_count < 2 or self.event_count < 1:
            raise ValueError("node_count and event_count must be positive (>= 2 nodes)")
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        for p in (self.switch_probability, self.homophily):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be non-negative")
        lo, hi = self.activity_span
        if not (0 < lo <= hi <= 1):
            raise ValueError("activity_span must satisfy 0 < lo <= hi <= 1")
        if not 0.0 <= self.onset_bias <= 1.0:
            raise ValueError("onset_bias must lie in [0, 1]")


class _AlivePools:
    """Alive-node membership with O(1) per-class and global uniform draws."""

    def __init__(self, node_count: int, class_count: int):
        self.by_class: list[list[int]] = [[] for _ in range(class_count)]
        self.all: list[int] = []
        self.class_pos = np.full(node_count, -1, dtype=np.int64)
        self.all_pos = np.full(node_count, -1, dtype=np.int64)

    @staticmethod
    def _add(bucket, positions, u):
        positions[u] = len(bucket)
        bucket.append(u)

    @staticmethod
    def _remove(bucket, positions, u):
        pos = positions[u]
        last = bucket[-1]
        bucket[pos] = last
        positions[last] = pos
        bucket.pop()
        positions[u] = -1

    def activate(self, u: int, cls: int):
        self._add(self.by_class[cls], self.class_pos, u)
        self._add(self.all, self.all_pos, u)

    def deactivate(self, u: int, cls: int):
        self._remove(self.by_class[cls], self.class_pos, u)
        self._remove(self.all, self.all_pos, u)

    def move(self, u: int, old: int, new: int):
        self._remove(self.by_class[old], self.class_pos, u)
        self._add(self.by_class[new], self.class_pos, u)

    def draw(self, rng, exclude: int, cls: Optional[int] = None) -> Optional[int]:
        bucket = self.all if cls is None else self.by_class[cls]
        limit = len(bucket)
        if limit == 0 or (limit == 1 and bucket[0] == exclude):
            return None
        while True:
            v = bucket[int(rng.integers(limit))]
            if v != exclude:
                return v

    def __len__(self):
        return len(self.all)


def _class_centroids(class_count: int, dim: int) -> np.ndarray:
    if class_count == 2:
        base = np.ones(dim)
        return np.stack([base, -base])
    rng = np.random.default_rng(977)  # fixed geometry shared by all seeds
    return rng.choice([-1.0, 1.0], size=(class_count, dim))


def generate_drift(config: DriftConfig) -> LabeledDataset:
    """Seed-deterministic drift graph with ground-truth dynamic labels.

    Event i gets timestamp i+1 (already chronological). Edge features mix the
    two endpoints' current class centroids, so a node's recent edges reflect
    its class at that moment; node features reflect the initial class only.
    """
    rng = np.random.default_rng(config.seed)
    C, d = config.class_count, config.feature_dim
    n, n_ev = config.node_count, config.event_count
    codes = _class_centroids(C, d)
    centroids = codes * config.signal_scale
    weights = config.initial_class_weights
    if weights is None:
        # onset-heavy start: most nodes begin in the low classes and flips
        # push them upward over time (fraud / ban onset shape)
        weights = tuple(3.0 ** (C - 1 - c) for c in range(C))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (C,) or (weights < 0).any() or weights.sum() <= 0:
        raise ValueError("initial_class_weights must be non-negative, one per class")
    latent = rng.choice(C, size=n, p=weights / weights.sum()).astype(np.int64)

    # node features reflect the class a node started with; for nodes that
    # later flip they become a stale (misleading) static signal
    node_features = (codes[latent] * config.node_signal_scale
                     + config.feature_noise * rng.normal(size=(n, d))
                     ).astype(np.float32)

    lo, hi = config.activity_span
    spans = rng.uniform(lo, hi, size=n) * n_ev
    # windows fit inside the stream, so window ends (hence final timestamps)
    # spread over the whole duration instead of piling up at the last event
    starts = rng.uniform(0, np.maximum(n_ev - spans, 0.0))
    ends = starts + spans
    start_order = np.argsort(starts, kind="stable")
    end_order = np.argsort(ends, kind="stable")
    switch_hits = rng.random(n_ev) < config.switch_probability
    active = np.zeros(n, dtype=bool)
    ever_active = np.zeros(n, dtype=bool)
    pools = _AlivePools(n, C)
    sp = ep = 0

    def activate(w: int):
        active[w] = True
        ever_active[w] = True
        pools.activate(w, int(latent[w]))

    def force_activate(cls: Optional[int]) -> Optional[int]:
        # earliest pending node (optionally of a given current class)
        for j in range(sp, n):
            w = int(start_order[j])
            if not ever_active[w] and (cls is None or int(latent[w]) == cls):
                activate(w)
                return w
        return None

    src = np.empty(n_ev, dtype=np.int64)
    dst = np.empty(n_ev, dtype=np.int64)
    ts = np.arange(1, n_ev + 1, dtype=np.float64)
    edge_features = np.empty((n_ev, d), dtype=np.float32)
    dynamic: dict[tuple[int, float], int] = {}

    for i in range(n_ev):
        while sp < n and starts[start_order[sp]] <= i:
            w = int(start_order[sp])
            if not ever_active[w]:
                activate(w)
            sp += 1
        while ep < n and ends[end_order[ep]] <= i:
            w = int(end_order[ep])
            if active[w] and len(pools) > 2:  # the last two nodes survive
                active[w] = False
                pools.deactivate(w, int(latent[w]))
            ep += 1
        while len(pools) < 2:  # never let the population die out
            if force_activate(None) is None:
                raise ValueError("activity windows too sparse to place events")

        u = pools.draw(rng, exclude=-1)
        cu = int(latent[u])
        if rng.random() < config.homophily:
            v = pools.draw(rng, exclude=u, cls=cu)
            if v is None:
                v = force_activate(cu)
            if v is None:
                # no same-class node alive or pending: pick any same-class
                # node even if its window already closed
                candidates = np.flatnonzero(latent == cu)
                candidates = candidates[candidates != u]
                if candidates.size:
                    v = int(candidates[int(rng.integers(candidates.size))])
        else:
            if C == 2:
                other = 1 - cu
            else:
                other = int(rng.integers(C - 1))
                other += other >= cu
            v = pools.draw(rng, exclude=u, cls=other)
        if v is None:
            v = pools.draw(rng, exclude=u)
        cv = int(latent[v])

        src[i], dst[i] = u, v
        edge_features[i] = ((centroids[cu] + centroids[cv]) / 2
                            + config.feature_noise * rng.normal(size=d))
        t = float(ts[i])
        dynamic[(u, t)] = cu
        dynamic[(v, t)] = cv

        if switch_hits[i]:
            # flips are directional on average (think fraud or ban onset):
            # with onset_bias the flip targets a lowest-class participant and
            # moves it one class up, so a node's late history diverges from
            # its early history in a consistent direction
            low_class = min(cu, cv)
            if low_class < C - 1 and rng.random() < config.onset_bias:
                flip = u if cu <= cv else v
                old = int(latent[flip])
                new = old + 1
            else:
                flip = u if rng.integers(2) == 0 else v
                old = int(latent[flip])
                if C == 2:
                    new = 1 - old
                else:
                    new = int(rng.integers(C - 1))
                    new += new >= old
            latent[flip] = new
            pools.move(flip, old, new)

    graph = graph_from_arrays(src, dst, ts, edge_features, node_features,
                              class_count=C, node_count=config.node_count)
    final = np.full(config.node_count, -1, dtype=np.int64)
    for u in range(config.node_count):
        if graph.has_events(u):
            final[u] = dynamic[(u, graph.final_timestamp(u))]

    meta = DatasetMeta(name=f"drift-{config.seed}", class_count=C, bipartite=False)
    ds = LabeledDataset(graph, final, dynamic, meta)
    ds.validate()
    return ds


def count_label_switches(dataset: LabeledDataset) -> int:
    """Number of (node, consecutive-timestamp) dynamic-label changes."""
    if dataset.dynamic_labels is None:
        raise ValueError("dataset has no dynamic labels")
    switches = 0
    for u in range(dataset.graph.node_count):
        tl = dataset.graph.timeline(u)
        labels = [dataset.dynamic_labels[(u, float(t))] for t in tl]
        switches += sum(1 for a, b in zip(labels, labels[1:]) if a != b)
    return switches


def save_generic(dataset: LabeledDataset, out_dir: str,
                 include_dynamic: bool = True):
    """Write the dataset in the generic directory format."""
    os.makedirs(out_dir, exist_ok=True)
    g = dataset.graph
    with open(os.path.join(out_dir, "edges.csv"), "w") as fh:
        cols = ",".join(f"f{j}" for j in range(g.edge_feature_dim))
        fh.write("src,dst,t" + ("," + cols if cols else "") + "\n")
        for i in range(g.event_count):
            feats = ",".join(repr(float(x)) for x in g.edge_features[i])
            fh.write(f"{int(g.sources[i])},{int(g.destinations[i])},{float(g.timestamps[i])!r}"
                     + ("," + feats if feats else "") + "\n")
    with open(os.path.join(out_dir, "nodes.csv"), "w") as fh:
        cols = ",".join(f"f{j}" for j in range(g.node_feature_dim))
        fh.write("id" + ("," + cols if cols else "") + "\n")
        for u in range(g.node_count):
            feats = ",".join(repr(float(x)) for x in g.node_features[u])
            fh.write(f"{u}" + ("," + feats if feats else "") + "\n")
    with open(os.path.join(out_dir, "labels.csv"), "w") as fh:
        if include_dynamic and dataset.dynamic_labels is not None:
            fh.write("id,label,t\n")
            for (u, t), y in sorted(dataset.dynamic_labels.items()):
                fh.write(f"{u},{y},{t!r}\n")
        else:
            fh.write("id,label\n")
            for u in dataset.labeled_nodes():
                fh.write(f"{int(u)},{int(dataset.final_labels[u])}\n")
