"""Pseudo-label reliability weighting.

The temporal strategy opens the curriculum from recent to early history: a
pseudo-label at discrete temporal distance d from its node's final timestamp
gets weight 1 while d <= tau (the EM iteration counter) and decays
exponentially in (d - tau) beyond it. The confidence-threshold and
softmax-trajectory-entropy strategies are kept as comparison filters, and
`naive` disables filtering entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .decoder import PseudoLabelSet
from .graph import DynamicGraph, temporal_distance


def temporal_weight(d: int, tau: int, gamma: float) -> float:
    """Weight of a pseudo-label at temporal distance ``d`` in iteration
    ``tau``: 1 on the plateau d <= tau, exp(-gamma * (d - tau)) beyond."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if d < 0:
        raise ValueError("temporal distance must be non-negative")
    if d <= tau:
        return 1.0
    return math.exp(-gamma * (d - tau))


@dataclass
class CurriculumState:
    """Per-run weighting state.

    ``est_history`` accumulates the generation softmax rows across EM
    iterations, keyed like the pseudo-label set; exactly one writer appends
    per iteration.
    """

    iteration: int = 0
    decay_rate: float = 0.5
    strategy: str = "temporal"          # temporal | naive | cst | est
    cst_threshold: float = 0.8
    est_threshold: Optional[float] = None  # default 0.5 * log(class_count)
    est_history: dict[tuple[int, float], np.ndarray] = field(default_factory=dict)
    est_rounds: int = 0

    def __post_init__(self):
        if self.decay_rate <= 0:
            raise ValueError("decay_rate must be positive")
        if self.strategy not in ("temporal", "naive", "cst", "est"):
            raise ValueError(f"unknown curriculum strategy: {self.strategy!r}")
        if not (0 < self.cst_threshold < 1):
            raise ValueError("cst_threshold must be in (0, 1)")

    def record_generation(self, pseudo: PseudoLabelSet):
        """Accumulate this round's softmax rows (EST bookkeeping)."""
        self.est_rounds += 1
        for i in range(len(pseudo)):
            key = (int(pseudo.nodes[i]), float(pseudo.times[i]))
            row = pseudo.probs[i].astype(np.float64)
            if key in self.est_history:
                self.est_history[key] = self.est_history[key] + row
            else:
                self.est_history[key] = row


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def assign_weights(pseudo: PseudoLabelSet, graph: DynamicGraph,
                   state: CurriculumState) -> PseudoLabelSet:
    """Fill in per-entry weights according to the configured strategy.

    Weights are recomputed from scratch each call; temporal yields values in
    (0, 1], the filter strategies yield exactly {0, 1}.
    """
    m = len(pseudo)
    weights = np.ones(m, dtype=np.float64)

    if state.strategy == "temporal":
        if state.iteration < 1:
            raise ValueError("temporal weighting needs iteration >= 1")
        for i in range(m):
            d = temporal_distance(graph, int(pseudo.nodes[i]), float(pseudo.times[i]))
            weights[i] = temporal_weight(d, state.iteration, state.decay_rate)
    elif state.strategy == "naive":
        pass
    elif state.strategy == "cst":
        if pseudo.probs.shape[1] == 0:
            raise ValueError("confidence weighting needs generation probabilities")
        weights = (pseudo.probs.max(axis=1) >= state.cst_threshold).astype(np.float64)
    elif state.strategy == "est":
        if state.est_rounds < 1 or not state.est_history:
            raise ValueError("trajectory-entropy weighting needs at least one recorded round")
        threshold = state.est_threshold
        if threshold is None:
            threshold = 0.5 * math.log(graph.class_count)
        for i in range(m):
            key = (int(pseudo.nodes[i]), float(pseudo.times[i]))
            acc = state.est_history.get(key)
            if acc is None:
                weights[i] = 0.0
                continue
            weights[i] = 1.0 if _entropy(acc / acc.sum()) <= threshold else 0.0

    out = PseudoLabelSet(pseudo.nodes, pseudo.times, pseudo.labels,
                         weights, pseudo.probs, state.iteration)
    return out
