"""Label head mapping embeddings to class distributions, and pseudo-label
generation over the pre-boundary (node, timestamp) index set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .encoders import EncoderConfig, embed_nodes
from .graph import DynamicGraph, SplitSpec


class Decoder(nn.Module):
    """MLP from embedding space to class logits."""

    def __init__(self, input_dim: int, class_count: int, hidden_dim: int = 80,
                 dropout: float = 0.1):
        super().__init__()
        self.input_dim = input_dim
        self.class_count = class_count
        self.net = nn.Sequential(
            nn.Linear(input_dim, hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden_dim, class_count),
        )

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        if embeddings.shape[-1] != self.input_dim:
            raise ValueError(
                f"embedding dim {embeddings.shape[-1]} != decoder input dim {self.input_dim}")
        return self.net(embeddings)


def decode(decoder: Decoder, embeddings) -> np.ndarray:
    """Class-probability rows (softmax over logits), eval-mode deterministic."""
    emb = torch.as_tensor(np.asarray(embeddings, dtype=np.float32)) \
        if not isinstance(embeddings, torch.Tensor) else embeddings
    was_training = decoder.training
    decoder.eval()
    try:
        with torch.no_grad():
            probs = torch.softmax(decoder(emb), dim=-1)
    finally:
        if was_training:
            decoder.train()
    return probs.cpu().numpy()


@dataclass
class PseudoLabelSet:
    """Hard pseudo-labels for every labeled node's non-final timestamp at or
    before the boundary, with curriculum weights and the generating softmax
    rows (kept for the confidence/entropy weighting strategies)."""

    nodes: np.ndarray        # (m,) int64
    times: np.ndarray        # (m,) float64
    labels: np.ndarray       # (m,) int64
    weights: np.ndarray      # (m,) float64 in (0, 1]
    probs: np.ndarray        # (m, class_count) float32
    iteration: int = 0

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def key_index(self) -> dict[tuple[int, float], int]:
        return {(int(u), float(t)): i
                for i, (u, t) in enumerate(zip(self.nodes, self.times))}

    def replace_labels(self, labels: np.ndarray) -> "PseudoLabelSet":
        return PseudoLabelSet(self.nodes, self.times, np.asarray(labels, dtype=np.int64),
                              self.weights.copy(), self.probs, self.iteration)


def pseudo_label_index(graph: DynamicGraph, labeled_nodes, boundary_time: float):
    """All (node, timestamp) pairs with a distinct non-final timestamp at or
    before the boundary, ordered by (timestamp, node) for chronological
    batching."""
    nodes_out: list[int] = []
    times_out: list[float] = []
    for u in np.asarray(labeled_nodes, dtype=np.int64):
        tl = graph.timeline(int(u))
        if tl.size < 2:
            continue
        for t in tl[:-1]:
            if t <= boundary_time:
                nodes_out.append(int(u))
                times_out.append(float(t))
    nodes_arr = np.asarray(nodes_out, dtype=np.int64)
    times_arr = np.asarray(times_out, dtype=np.float64)
    order = np.lexsort((nodes_arr, times_arr))
    return nodes_arr[order], times_arr[order]


def generate_pseudo_labels(graph: DynamicGraph, encoder, decoder: Decoder,
                           split: SplitSpec, sampler, config: EncoderConfig,
                           iteration: int = 0, batch_size: int = 512,
                           cache: Optional[dict] = None) -> PseudoLabelSet:
    """Argmax-decode every pre-boundary non-final pair of the labeled nodes.

    Each entry is decoded independently from its own embedding, so changing
    one pair's embedding cannot affect another's label. Ties go to the lowest
    class index; weights start at 1 and are assigned by the curriculum
    afterwards.
    """
    nodes, times = pseudo_label_index(graph, split.labeled_nodes(), split.boundary_time)
    if nodes.size == 0:
        probs = np.zeros((0, graph.class_count), dtype=np.float32)
        return PseudoLabelSet(nodes, times, np.zeros(0, dtype=np.int64),
                              np.zeros(0), probs, iteration)

    encoder_was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            emb = embed_nodes(encoder, graph, sampler, nodes, times, config,
                              batch_size=batch_size, cache=cache,
                              cache_key="pseudo_index")
    finally:
        if encoder_was_training:
            encoder.train()
    probs = decode(decoder, emb)
    labels = probs.argmax(axis=1).astype(np.int64)  # argmax takes the lowest index on ties
    return PseudoLabelSet(nodes=nodes, times=times, labels=labels,
                          weights=np.ones(nodes.shape[0]), probs=probs,
                          iteration=iteration)


def dump_pseudo_labels(path: str, pseudo: PseudoLabelSet):
    """One `node_id,timestamp,pseudo_label,weight,iteration` row per entry."""
    with open(path, "w") as fh:
        fh.write("node_id,timestamp,pseudo_label,weight,iteration\n")
        for i in range(len(pseudo)):
            fh.write(f"{int(pseudo.nodes[i])},{float(pseudo.times[i])!r},"
                     f"{int(pseudo.labels[i])},{float(pseudo.weights[i])!r},"
                     f"{pseudo.iteration}\n")


def load_pseudo_labels(path: str) -> PseudoLabelSet:
    nodes, times, labels, weights = [], [], [], []
    iteration = 0
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("node_id"):
            raise ValueError(f"{path}: missing pseudo-label dump header")
        for line in fh:
            u, t, y, w, it = line.rstrip("\n").split(",")
            nodes.append(int(u))
            times.append(float(t))
            labels.append(int(y))
            weights.append(float(w))
            iteration = int(it)
    m = len(nodes)
    return PseudoLabelSet(np.asarray(nodes, dtype=np.int64),
                          np.asarray(times, dtype=np.float64),
                          np.asarray(labels, dtype=np.int64),
                          np.asarray(weights, dtype=np.float64),
                          np.zeros((m, 0), dtype=np.float32), iteration)
