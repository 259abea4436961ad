"""Metrics (rank AUC, accuracy, label consistency), multi-seed aggregation
and report shapes for the final-timestamp evaluation protocol."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np


def auc(scores, labels) -> float:
    """Rank-based AUC with midrank tie handling.

    Requires both classes present; equals the probability that a random
    positive outranks a random negative, counting ties as half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores and labels must be equal-length non-empty vectors")
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    pos_rank_sum = ranks[positives].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    return float((predictions == labels).mean())


def consistency(label_sequence) -> float:
    """Fraction of a node's non-final history covered by the trailing run of
    labels equal to the final one.

    The sequence is the node's labels ordered by timestamp, final included;
    it must have at least two entries. 0 when the label right before the
    final differs, 1 when the whole history matches.
    """
    seq = list(label_sequence)
    if len(seq) < 2:
        raise ValueError("consistency needs at least two timestamps")
    final = seq[-1]
    run = 0
    for value in reversed(seq[:-1]):
        if value != final:
            break
        run += 1
    return run / (len(seq) - 1)


def consistency_histogram(values, bins: int = 10):
    """Counts of consistency values over `bins` uniform bins of [0, 1]."""
    values = np.asarray(values, dtype=np.float64)
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return counts.tolist(), edges.tolist()


def classification_metric(probs: np.ndarray, labels: np.ndarray,
                          class_count: int) -> tuple[str, float]:
    """The protocol metric: AUC of the positive-class score for binary
    problems, exact-match accuracy otherwise."""
    if class_count == 2:
        return "auc", auc(probs[:, 1], labels)
    return "acc", accuracy(probs.argmax(axis=1), labels)


@dataclass
class EvalReport:
    """Aggregated multi-seed evaluation results."""

    metric_name: str
    per_seed_values: list[float] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    mean: Optional[float] = None
    standard_deviation: Optional[float] = None
    consistency_histogram: Optional[dict] = None
    convergence_curve: Optional[list[list[float]]] = None  # per seed, per iteration
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate_report(metric_name: str, seeds: list[int], values: list[float],
                     curves: Optional[list[list[float]]] = None,
                     failures: Optional[list[dict]] = None) -> EvalReport:
    report = EvalReport(metric_name=metric_name, per_seed_values=list(values),
                        seeds=list(seeds), convergence_curve=curves,
                        failures=failures or [])
    if values:
        report.mean = float(np.mean(values))
        if len(values) >= 2:
            report.standard_deviation = float(np.std(values))
    return report


def multi_seed_run(spec_template, dataset, encoder_config, seeds,
                   sampler_kind: str = "reference",
                   split_config: Optional[dict] = None,
                   out_dir: Optional[str] = None) -> EvalReport:
    """Run the configured method once per seed and aggregate the test metric.

    Each seed gets an isolated training context; a failing seed is recorded
    in the report instead of aborting the sweep.
    """
    from dataclasses import replace
    from .training import run_method  # local import avoids a module cycle

    values: list[float] = []
    ok_seeds: list[int] = []
    curves: list[list[float]] = []
    failures: list[dict] = []
    metric_name = "auc" if dataset.metadata.class_count == 2 else "acc"
    for seed in seeds:
        spec = replace(spec_template, seed=int(seed))
        try:
            result = run_method(dataset, spec, encoder_config,
                                sampler_kind=sampler_kind,
                                split_config=split_config, out_dir=out_dir)
        except Exception as exc:  # noqa: BLE001 - partial reports are the contract
            failures.append({"seed": int(seed), "error": f"{type(exc).__name__}: {exc}"})
            continue
        values.append(result.test_metric)
        ok_seeds.append(int(seed))
        curves.append(result.history.val_metrics)
    return aggregate_report(metric_name, ok_seeds, values, curves, failures)
