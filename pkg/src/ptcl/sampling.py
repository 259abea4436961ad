"""Temporal neighbor retrieval and negative edge sampling.

The reference sampler is the behavioral contract: for each query (u, t) it
returns the up-to-k most recent events of u strictly before t, most recent
first, in a fixed columnar layout (padded (n, k) arrays + valid counts).
An accelerated native implementation can be loaded behind the same contract
and must reproduce it bit for bit; see :func:`make_sampler`.
"""

from __future__ import annotations

import ctypes
import os
from dataclasses import dataclass

import numpy as np

from .graph import DynamicGraph

# padding time for slots beyond valid_count; padding id is graph.node_count
PAD_TIME = 0.0
PAD_EDGE = -1


@dataclass
class NeighborBatch:
    """Columnar answer to a batch of (node, time) queries.

    Row i holds query i's neighbors, most recent first; entries past
    ``valid_counts[i]`` are padding (id = node_count sentinel, time 0,
    edge index -1).
    """

    neighbor_ids: np.ndarray    # (n, k) int32
    neighbor_times: np.ndarray  # (n, k) float64
    edge_indices: np.ndarray    # (n, k) int32
    valid_counts: np.ndarray    # (n,) int32

    @property
    def k(self) -> int:
        return self.neighbor_ids.shape[1]


class ReferenceSampler:
    """Pure numpy sampler over an immutable graph; safe for concurrent use."""

    name = "reference"

    def __init__(self, graph: DynamicGraph):
        self.graph = graph

    def sample(self, nodes: np.ndarray, times: np.ndarray, k: int) -> NeighborBatch:
        return recent_neighbors(self.graph, nodes, times, k)


def recent_neighbors(graph: DynamicGraph, nodes, times, k: int) -> NeighborBatch:
    """Most recent up-to-k events strictly before each query time.

    The reported neighbor is the other endpoint of each event; ties in event
    time are broken by event index (later index = more recent).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    n = nodes.shape[0]
    sentinel = graph.node_count

    neighbor_ids = np.full((n, k), sentinel, dtype=np.int32)
    neighbor_times = np.full((n, k), PAD_TIME, dtype=np.float64)
    edge_indices = np.full((n, k), PAD_EDGE, dtype=np.int32)
    valid_counts = np.zeros(n, dtype=np.int32)

    sources = graph.sources
    destinations = graph.destinations
    for i in range(n):
        u = int(nodes[i])
        positions, pos_times = graph.adjacency(u)
        end = int(np.searchsorted(pos_times, times[i], side="left"))
        if end == 0:
            continue
        start = max(end - k, 0)
        sel = positions[start:end][::-1]  # most recent first
        c = sel.shape[0]
        others = np.where(sources[sel] == u, destinations[sel], sources[sel])
        neighbor_ids[i, :c] = others
        neighbor_times[i, :c] = graph.timestamps[sel]
        edge_indices[i, :c] = sel
        valid_counts[i] = c

    return NeighborBatch(neighbor_ids, neighbor_times, edge_indices, valid_counts)


def negative_sample(graph: DynamicGraph, sources, destinations, seed: int) -> np.ndarray:
    """One corrupted destination per positive edge: uniform over node ids,
    resampled until different from the true destination. Deterministic in
    ``seed``."""
    sources = np.asarray(sources, dtype=np.int64)
    destinations = np.asarray(destinations, dtype=np.int64)
    if sources.size == 0:
        raise ValueError("positive batch must be non-empty")
    if graph.node_count < 2:
        raise ValueError("need at least 2 nodes to draw negative destinations")

    rng = np.random.default_rng(seed)
    negatives = rng.integers(0, graph.node_count, size=destinations.shape[0])
    clash = negatives == destinations
    while clash.any():
        negatives[clash] = rng.integers(0, graph.node_count, size=int(clash.sum()))
        clash = negatives == destinations
    return negatives.astype(np.int64)


class _AccelLib:
    """ctypes binding to the native sampler shared library."""

    def __init__(self, path: str):
        lib = ctypes.CDLL(path)
        lib.tsa_build_index.restype = ctypes.c_void_p
        lib.tsa_build_index.argtypes = [
            ctypes.c_uint64, ctypes.c_uint64,
            ctypes.POINTER(ctypes.c_int32), ctypes.POINTER(ctypes.c_int32),
            ctypes.POINTER(ctypes.c_double),
        ]
        lib.tsa_query.restype = ctypes.c_int32
        lib.tsa_query.argtypes = [
            ctypes.c_void_p, ctypes.c_uint64,
            ctypes.POINTER(ctypes.c_int32), ctypes.POINTER(ctypes.c_double),
            ctypes.c_uint32,
            ctypes.POINTER(ctypes.c_int32), ctypes.POINTER(ctypes.c_double),
            ctypes.POINTER(ctypes.c_int32), ctypes.POINTER(ctypes.c_int32),
        ]
        lib.tsa_free.restype = None
        lib.tsa_free.argtypes = [ctypes.c_void_p]
        self.lib = lib


def _default_accel_paths():
    names = ["libsampler_accel.so", "sampler_accel.dll", "libsampler_accel.dylib"]
    env = os.environ.get("PTCL_ACCEL_LIB")
    if env:
        yield env
    root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    for sub in ("sampler-accel/target/release", "sampler-accel/target/debug"):
        for name in names:
            yield os.path.join(root, sub, name)


def find_accel_library() -> str | None:
    for path in _default_accel_paths():
        if path and os.path.exists(path):
            return path
    return None


class AccelSampler:
    """Sampler backed by the native columnar index (same contract as the
    reference). Index build is exclusive; queries afterwards are read-only."""

    name = "accel"

    def __init__(self, graph: DynamicGraph, lib_path: str | None = None):
        path = lib_path or find_accel_library()
        if path is None:
            raise FileNotFoundError(
                "accelerated sampler library not found; build sampler-accel or set PTCL_ACCEL_LIB")
        self.graph = graph
        self._binding = _AccelLib(path)
        self._sources = np.ascontiguousarray(graph.sources, dtype=np.int32)
        self._destinations = np.ascontiguousarray(graph.destinations, dtype=np.int32)
        self._timestamps = np.ascontiguousarray(graph.timestamps, dtype=np.float64)
        handle = self._binding.lib.tsa_build_index(
            ctypes.c_uint64(graph.event_count), ctypes.c_uint64(graph.node_count),
            self._sources.ctypes.data_as(ctypes.POINTER(ctypes.c_int32)),
            self._destinations.ctypes.data_as(ctypes.POINTER(ctypes.c_int32)),
            self._timestamps.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
        )
        if not handle:
            raise RuntimeError("native index build failed")
        self._handle = handle

    def sample(self, nodes, times, k: int) -> NeighborBatch:
        if k < 1:
            raise ValueError("k must be >= 1")
        nodes32 = np.ascontiguousarray(nodes, dtype=np.int32)
        times64 = np.ascontiguousarray(times, dtype=np.float64)
        n = nodes32.shape[0]
        out_ids = np.empty((n, k), dtype=np.int32)
        out_times = np.empty((n, k), dtype=np.float64)
        out_edges = np.empty((n, k), dtype=np.int32)
        out_valid = np.empty(n, dtype=np.int32)
        rc = self._binding.lib.tsa_query(
            self._handle, ctypes.c_uint64(n),
            nodes32.ctypes.data_as(ctypes.POINTER(ctypes.c_int32)),
            times64.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
            ctypes.c_uint32(k),
            out_ids.ctypes.data_as(ctypes.POINTER(ctypes.c_int32)),
            out_times.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
            out_edges.ctypes.data_as(ctypes.POINTER(ctypes.c_int32)),
            out_valid.ctypes.data_as(ctypes.POINTER(ctypes.c_int32)),
        )
        if rc != 0:
            raise RuntimeError(f"native sampler query failed with code {rc}")
        return NeighborBatch(out_ids, out_times, out_edges, out_valid)

    def __del__(self):
        handle = getattr(self, "_handle", None)
        if handle:
            self._binding.lib.tsa_free(handle)
            self._handle = None


def make_sampler(graph: DynamicGraph, kind: str = "reference"):
    """Instantiate a sampler by config name. ``accel`` falls back to the
    reference implementation when the native library is absent."""
    if kind == "reference":
        return ReferenceSampler(graph)
    if kind == "accel":
        try:
            return AccelSampler(graph)
        except (FileNotFoundError, OSError):
            return ReferenceSampler(graph)
    raise ValueError(f"unknown sampler kind: {kind!r}")
