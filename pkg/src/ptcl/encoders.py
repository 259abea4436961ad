"""Time-aware node embedding backbones.

Two encoder families behind one interface: an attention encoder (per-layer
self-attention over the most recent neighbors, learnable cosine time
encoding) and an MLP-mixer encoder (token mixing over recent edges with a
fixed cosine time encoding plus neighbor mean pooling).

Both consume :class:`AssembledBatch` inputs built once per query set by
:func:`assemble_batch`; assembly is where the sampler runs, so repeated
epochs over a fixed query set can reuse the assembled tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from .graph import DynamicGraph
from .sampling import NeighborBatch


@dataclass
class EncoderConfig:
    encoder_kind: str = "tgat"          # tgat | graphmixer
    time_dim: int = 100
    output_dim: int = 172
    attention_heads: int = 2
    layers: int = 2
    neighbor_k: int = 20
    time_gap: int = 2000                # mixer recency window, in interactions
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("time_dim", "output_dim", "attention_heads", "layers",
                     "neighbor_k", "time_gap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.encoder_kind not in ("tgat", "graphmixer"):
            raise ValueError(f"unknown encoder kind: {self.encoder_kind!r}")
        if self.encoder_kind == "tgat" and self.output_dim % self.attention_heads:
            raise ValueError("output_dim must be divisible by attention_heads")


@dataclass
class Embedding:
    """One embedding row at (node, time); all entries finite."""
    vector: np.ndarray
    node: int
    time: float


def geometric_frequencies(dim: int) -> np.ndarray:
    """Frequency ladder 10^(-2i/dim), covering time scales over ~2 decades."""
    return np.power(10.0, -2.0 * np.arange(dim) / dim)


class TimeEncoder(nn.Module):
    """cos(delta_t * w + b) feature map; optionally trainable w, b.

    Frequencies start on the geometric ladder either way; the fixed variant
    registers them as buffers so they can never receive gradients.
    """

    def __init__(self, dim: int, learnable: bool = True):
        super().__init__()
        self.dim = dim
        w = torch.from_numpy(geometric_frequencies(dim)).float()
        b = torch.zeros(dim)
        if learnable:
            self.frequencies = nn.Parameter(w)
            self.phases = nn.Parameter(b)
        else:
            self.register_buffer("frequencies", w)
            self.register_buffer("phases", b)

    def forward(self, delta_t: torch.Tensor) -> torch.Tensor:
        return torch.cos(delta_t.unsqueeze(-1) * self.frequencies + self.phases)


def time_encode(enc: TimeEncoder, delta_t) -> np.ndarray:
    """Numpy-facing wrapper: encode a scalar or array of time deltas."""
    with torch.no_grad():
        t = torch.as_tensor(np.asarray(delta_t, dtype=np.float32))
        return enc(t).cpu().numpy()


@dataclass
class HopInputs:
    """Assembled tensors for one recursion level of neighbor aggregation."""
    query_nodes: torch.Tensor      # (n,) long
    query_raw: torch.Tensor        # (n, d_N)
    neighbor_raw: torch.Tensor     # (n, k, d_N)
    edge_feats: torch.Tensor       # (n, k, d_E)
    delta_t: torch.Tensor          # (n, k)
    mask: torch.Tensor             # (n, k) bool, True = valid slot


@dataclass
class AssembledBatch:
    """Sampler output converted to tensors, deepest hop last.

    ``levels[i]`` holds the inputs for queries at recursion depth i; depth 0
    is the user-facing query list. For an L-layer attention encoder, depth
    i+1's query list is depth i's query list followed by its flattened
    neighbor slots, so intermediate results can be recovered by slicing.
    """
    levels: list[HopInputs] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)  # query count per depth

    @property
    def n_queries(self) -> int:
        return self.counts[0]


def _gather_hop(graph: DynamicGraph, nodes: np.ndarray, times: np.ndarray,
                batch: NeighborBatch, dtype: torch.dtype) -> HopInputs:
    k = batch.k
    ids = batch.neighbor_ids.astype(np.int64)
    mask = ids != graph.node_count
    safe_ids = np.where(mask, ids, 0)
    neighbor_raw = graph.node_features[safe_ids]
    neighbor_raw = neighbor_raw * mask[..., None]
    edge_idx = np.where(mask, batch.edge_indices, 0).astype(np.int64)
    edge_feats = graph.edge_features[edge_idx] * mask[..., None]
    delta = (times[:, None] - batch.neighbor_times) * mask

    return HopInputs(
        query_nodes=torch.from_numpy(nodes.astype(np.int64)),
        query_raw=torch.from_numpy(graph.node_features[nodes]).to(dtype),
        neighbor_raw=torch.from_numpy(neighbor_raw).to(dtype),
        edge_feats=torch.from_numpy(edge_feats).to(dtype),
        delta_t=torch.from_numpy(delta).to(dtype),
        mask=torch.from_numpy(mask),
    )


def assemble_batch(graph: DynamicGraph, sampler, nodes, times,
                   config: EncoderConfig,
                   dtype: torch.dtype = torch.float32) -> AssembledBatch:
    """Run the sampler for every recursion level and gather features.

    The result is a pure function of (graph, queries, config) and contains
    everything the encoders need, so it can be cached and reused across
    epochs while parameters change.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    depth = config.layers if config.encoder_kind == "tgat" else 1
    k = config.neighbor_k
    if config.encoder_kind == "graphmixer":
        k = min(k, config.time_gap)

    out = AssembledBatch()
    cur_nodes, cur_times = nodes, times
    for _ in range(depth):
        nb = sampler.sample(cur_nodes, cur_times, k)
        out.levels.append(_gather_hop(graph, cur_nodes, cur_times, nb, dtype))
        out.counts.append(cur_nodes.shape[0])
        mask = nb.neighbor_ids != graph.node_count
        next_nodes = np.where(mask, nb.neighbor_ids, 0).astype(np.int64).ravel()
        next_times = np.where(mask, nb.neighbor_times, 0.0).ravel()
        cur_nodes = np.concatenate([cur_nodes, next_nodes])
        cur_times = np.concatenate([cur_times, next_times])
    return out


class _AttentionLayer(nn.Module):
    """Multi-head attention of a query token over its neighbor tokens,
    merged with the query's raw features through a two-layer head."""

    def __init__(self, input_dim: int, node_dim: int, edge_dim: int,
                 time_dim: int, output_dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = output_dim // heads
        attn_dim = output_dim
        self.query_proj = nn.Linear(input_dim + time_dim, attn_dim)
        self.key_proj = nn.Linear(input_dim + edge_dim + time_dim, attn_dim)
        self.value_proj = nn.Linear(input_dim + edge_dim + time_dim, attn_dim)
        self.merge1 = nn.Linear(attn_dim + node_dim, output_dim)
        self.merge2 = nn.Linear(output_dim, output_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query_state, query_time_enc, neighbor_state, edge_feats,
                neighbor_time_enc, mask, query_raw):
        n, k, _ = neighbor_state.shape
        q = self.query_proj(torch.cat([query_state, query_time_enc], dim=-1))
        kv_in = torch.cat([neighbor_state, edge_feats, neighbor_time_enc], dim=-1)
        key = self.key_proj(kv_in)
        value = self.value_proj(kv_in)

        q = q.view(n, self.heads, self.head_dim)
        key = key.view(n, k, self.heads, self.head_dim)
        value = value.view(n, k, self.heads, self.head_dim)

        scores = torch.einsum("nhd,nkhd->nhk", q, key) / math.sqrt(self.head_dim)
        # finite mask value keeps gradients NaN-free even for empty rows;
        # exp() underflows to exactly 0 for the padded slots
        scores = scores.masked_fill(~mask.unsqueeze(1), torch.finfo(scores.dtype).min)
        attn = self.dropout(torch.softmax(scores, dim=-1))
        mixed = torch.einsum("nhk,nkhd->nhd", attn, value).reshape(n, -1)
        # queries with no history attend over nothing
        mixed = mixed * mask.any(dim=1, keepdim=True)

        h = torch.relu(self.merge1(torch.cat([mixed, query_raw], dim=-1)))
        return self.merge2(self.dropout(h))


class TGATEncoder(nn.Module):
    """Recursive attention over most-recent neighborhoods with learnable
    cosine time encoding; the query token uses a zero time delta."""

    kind = "tgat"

    def __init__(self, config: EncoderConfig, node_dim: int, edge_dim: int):
        super().__init__()
        self.config = config
        self.node_dim = node_dim
        self.edge_dim = edge_dim
        self.time_encoder = TimeEncoder(config.time_dim, learnable=True)
        self.layers = nn.ModuleList()
        for layer in range(config.layers):
            input_dim = node_dim if layer == 0 else config.output_dim
            self.layers.append(_AttentionLayer(
                input_dim=input_dim, node_dim=node_dim, edge_dim=edge_dim,
                time_dim=config.time_dim, output_dim=config.output_dim,
                heads=config.attention_heads, dropout=config.dropout))

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def forward(self, batch: AssembledBatch) -> torch.Tensor:
        depth = len(batch.levels)
        # deepest level first: aggregate raw features, then walk back up
        state: Optional[torch.Tensor] = None
        for li in range(depth - 1, -1, -1):
            hop = batch.levels[li]
            layer = self.layers[depth - 1 - li]
            n, k = hop.mask.shape
            if state is None:
                query_state = hop.query_raw
                neighbor_state = hop.neighbor_raw
            else:
                query_state = state[:n]
                neighbor_state = state[n:].view(n, k, -1)
                neighbor_state = neighbor_state * hop.mask.unsqueeze(-1)
            zeros = torch.zeros(n, dtype=hop.delta_t.dtype, device=hop.delta_t.device)
            state = layer(
                query_state=query_state,
                query_time_enc=self.time_encoder(zeros),
                neighbor_state=neighbor_state,
                edge_feats=hop.edge_feats,
                neighbor_time_enc=self.time_encoder(hop.delta_t),
                mask=hop.mask,
                query_raw=hop.query_raw,
            )
        return state


class _MixerBlock(nn.Module):
    def __init__(self, tokens: int, channels: int, dropout: float):
        super().__init__()
        self.token_norm = nn.LayerNorm(channels)
        self.token_mlp = nn.Sequential(
            nn.Linear(tokens, max(tokens // 2, 1)), nn.GELU(),
            nn.Dropout(dropout), nn.Linear(max(tokens // 2, 1), tokens))
        self.channel_norm = nn.LayerNorm(channels)
        self.channel_mlp = nn.Sequential(
            nn.Linear(channels, 4 * channels), nn.GELU(),
            nn.Dropout(dropout), nn.Linear(4 * channels, channels))

    def forward(self, x):
        y = self.token_norm(x).transpose(1, 2)
        x = x + self.token_mlp(y).transpose(1, 2)
        x = x + self.channel_mlp(self.channel_norm(x))
        return x


class GraphMixerEncoder(nn.Module):
    """Token-mixing link encoder over the most recent edges (fixed cosine
    time encoding) fused with mean-pooled neighbor node features."""

    kind = "graphmixer"

    def __init__(self, config: EncoderConfig, node_dim: int, edge_dim: int):
        super().__init__()
        self.config = config
        self.node_dim = node_dim
        self.edge_dim = edge_dim
        self.time_encoder = TimeEncoder(config.time_dim, learnable=False)
        channels = config.output_dim
        tokens = min(config.neighbor_k, config.time_gap)
        self.token_proj = nn.Linear(edge_dim + config.time_dim, channels)
        self.blocks = nn.ModuleList(
            _MixerBlock(tokens, channels, config.dropout) for _ in range(config.layers))
        self.link_norm = nn.LayerNorm(channels)
        self.out_proj = nn.Linear(channels + 2 * node_dim, config.output_dim)

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def forward(self, batch: AssembledBatch) -> torch.Tensor:
        hop = batch.levels[0]
        valid = hop.mask.unsqueeze(-1)
        tokens = torch.cat([hop.edge_feats, self.time_encoder(hop.delta_t)], dim=-1)
        tokens = self.token_proj(tokens) * valid
        for block in self.blocks:
            tokens = block(tokens)
        link_summary = self.link_norm(tokens.mean(dim=1))

        denom = valid.sum(dim=1).clamp(min=1)
        neighbor_mean = (hop.neighbor_raw * valid).sum(dim=1) / denom
        fused = torch.cat([link_summary, neighbor_mean, hop.query_raw], dim=-1)
        return self.out_proj(fused)


def build_encoder(config: EncoderConfig, graph: DynamicGraph) -> nn.Module:
    cls = {"tgat": TGATEncoder, "graphmixer": GraphMixerEncoder}[config.encoder_kind]
    return cls(config, node_dim=graph.node_feature_dim, edge_dim=graph.edge_feature_dim)


def assert_finite_parameters(module: nn.Module, name: str = "encoder"):
    for pname, p in module.named_parameters():
        if not torch.isfinite(p).all():
            raise FloatingPointError(f"non-finite parameter {name}.{pname}")


def embed_nodes(encoder: nn.Module, graph: DynamicGraph, sampler, nodes, times,
                config: EncoderConfig, batch_size: int = 512,
                cache: Optional[dict] = None, cache_key=None,
                dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Embed (node, time) queries in assembly batches.

    When ``cache``/``cache_key`` are given, the assembled sampler batches are
    stored and reused on later calls with the same query set (the assembly is
    parameter-independent). Gradients flow through the encoder normally.
    """
    assert_finite_parameters(encoder)
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)

    assembled = cache.get(cache_key) if (cache is not None and cache_key is not None) else None
    if assembled is None:
        assembled = [
            assemble_batch(graph, sampler, nodes[i:i + batch_size],
                           times[i:i + batch_size], config, dtype=dtype)
            for i in range(0, nodes.shape[0], batch_size)
        ]
        if cache is not None and cache_key is not None:
            cache[cache_key] = assembled

    outputs = [encoder(b) for b in assembled]
    return torch.cat(outputs, dim=0) if outputs else torch.empty(0, encoder.output_dim)


def embed(encoder: nn.Module, graph: DynamicGraph, sampler, queries,
          config: EncoderConfig) -> list[Embedding]:
    """Public inference surface: deterministic eval-mode embeddings."""
    nodes = np.asarray([q[0] for q in queries], dtype=np.int64)
    times = np.asarray([q[1] for q in queries], dtype=np.float64)
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            vectors = embed_nodes(encoder, graph, sampler, nodes, times, config)
    finally:
        if was_training:
            encoder.train()
    return [Embedding(vector=vectors[i].cpu().numpy().copy(), node=int(nodes[i]),
                      time=float(times[i])) for i in range(nodes.shape[0])]


def state_dict_to_arrays(module: nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def save_checkpoint(path: str, modules: dict[str, nn.Module], meta: Optional[dict] = None):
    """Persist parameters as one flat array container keyed by hierarchical
    names (stable across encoder kinds, no pickled code)."""
    arrays: dict[str, np.ndarray] = {}
    for name, module in modules.items():
        arrays.update(state_dict_to_arrays(module, name))
    if meta:
        for key, value in meta.items():
            arrays[f"__meta__.{key}"] = np.asarray(value)
    np.savez(path, **arrays)


def load_checkpoint(path: str, modules: dict[str, nn.Module]) -> dict:
    data = np.load(path, allow_pickle=False)
    meta = {}
    for name, module in modules.items():
        state = {}
        want = name + "."
        for key in data.files:
            if key.startswith(want):
                state[key[len(want):]] = torch.from_numpy(np.asarray(data[key]))
        module.load_state_dict(state)
    for key in data.files:
        if key.startswith("__meta__."):
            meta[key[len("__meta__."):]] = data[key]
    return meta
