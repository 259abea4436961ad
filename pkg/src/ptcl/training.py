"""Optimization engine: link-prediction warmup, the alternating decoder /
backbone steps with weighted pseudo-label losses, and dispatch for the six
training methods (ptcl, cft, dls, npl, ptcl2d, sem)."""

from __future__ import annotations

import copy
import json
import os
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .curriculum import CurriculumState, assign_weights
from .decoder import (Decoder, PseudoLabelSet, dump_pseudo_labels,
                      generate_pseudo_labels)
from .encoders import EncoderConfig, build_encoder, embed_nodes
from .evaluation import accuracy, auc
from .graph import DynamicGraph, SplitSpec, split_nodes
from .sampling import make_sampler, negative_sample

METHODS = ("ptcl", "cft", "dls", "npl", "ptcl2d", "sem")


class UnsupportedMethodError(ValueError):
    """Raised when a method cannot run on the given dataset (e.g. dynamic
    label supervision without dynamic labels)."""


@dataclass
class MethodSpec:
    """Declarative description of one training run."""

    method: str = "ptcl"
    alpha: float = 0.0              # decoder-step pseudo mix (sem only)
    beta: float = 0.5               # backbone-step pseudo mix
    gamma: float = 0.5              # curriculum decay rate
    em_iterations: int = 10
    epochs_per_step: int = 100
    patience: int = 15
    learning_rate: float = 1e-4
    batch_size: int = 200
    seed: int = 0
    curriculum_strategy: str = "temporal"   # temporal | naive | cst | est
    cst_threshold: float = 0.8
    est_threshold: Optional[float] = None
    warmup_epochs: Optional[int] = None     # defaults to epochs_per_step
    decoder_epochs: Optional[int] = None    # defaults to epochs_per_step
    em_patience: int = 2
    npl_refresh_every: int = 1
    decoder_hidden: int = 80
    decoder_dropout: float = 0.1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method: {self.method!r}")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.method == "ptcl" and self.alpha != 0.0:
            raise ValueError("ptcl fixes alpha = 0; use method 'sem' for alpha > 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.em_iterations < 0 or self.epochs_per_step < 1 or self.batch_size < 1:
            raise ValueError("em_iterations must be >= 0; epochs and batch size positive")

    @property
    def warmup_epoch_count(self) -> int:
        return self.epochs_per_step if self.warmup_epochs is None else self.warmup_epochs

    @property
    def decoder_epoch_count(self) -> int:
        return self.epochs_per_step if self.decoder_epochs is None else self.decoder_epochs


@dataclass
class TrainHistory:
    """Everything a run produced, one record per epoch / iteration."""

    metric_name: str = "auc"
    warmup_losses: list[float] = field(default_factory=list)
    warmup_val_auc: list[float] = field(default_factory=list)
    val_metrics: list[float] = field(default_factory=list)      # per EM iteration
    tau_values: list[int] = field(default_factory=list)
    iteration_seconds: list[float] = field(default_factory=list)
    step_epoch_losses: list[dict] = field(default_factory=list)
    best_iteration: int = -1
    best_val: float = float("-inf")
    timings: dict = field(default_factory=dict)

    def record_step(self, phase: str, iteration: int, epoch_losses: list[float]):
        self.step_epoch_losses.append({
            "phase": phase, "iteration": iteration,
            "epoch_losses": [float(x) for x in epoch_losses],
        })

    def records(self):
        # no wall-clock values here: the emitted history must be identical
        # across reruns of the same (config, seed); timings live in the
        # run summary instead
        for epoch, (loss, val) in enumerate(zip(self.warmup_losses, self.warmup_val_auc)):
            yield {"kind": "warmup_epoch", "epoch": epoch, "loss": loss, "val_link_auc": val}
        for entry in self.step_epoch_losses:
            for epoch, loss in enumerate(entry["epoch_losses"]):
                yield {"kind": "step_epoch", "phase": entry["phase"],
                       "iteration": entry["iteration"], "epoch": epoch, "loss": loss}
        for i, val in enumerate(self.val_metrics):
            yield {"kind": "iteration", "tau": self.tau_values[i],
                   "val_metric": val, "metric_name": self.metric_name}
        yield {"kind": "summary", "best_iteration": self.best_iteration,
               "best_val": self.best_val}

    def save_jsonl(self, path: str):
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class RunResult:
    history: TrainHistory
    split: SplitSpec
    metric_name: str
    test_metric: float
    val_metric: float
    predicted_labels: dict[int, int]
    predicted_probs: dict[int, list[float]]
    encoder: nn.Module
    decoder: Decoder
    last_pseudo: Optional[PseudoLabelSet] = None


class _LinkScorer(nn.Module):
    """Pair scorer used only during warmup and discarded afterwards."""

    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(2 * dim, dim)
        self.fc2 = nn.Linear(dim, 1)

    def forward(self, h_left, h_right):
        return self.fc2(torch.relu(self.fc1(torch.cat([h_left, h_right], dim=-1)))).squeeze(-1)


class _EarlyStopper:
    """Tracks the best validation value and snapshots module states."""

    def __init__(self, patience: int, modules: dict[str, nn.Module]):
        self.patience = patience
        self.modules = modules
        self.best = float("-inf")
        self.bad_rounds = 0
        self.snapshot: Optional[dict] = None

    def update(self, value: float) -> bool:
        """Record a round; True means stop now. Ties refresh the snapshot
        (training may still be improving along axes the metric saturates on)
        but only strict improvement resets the patience counter."""
        if value >= self.best:
            self.snapshot = {name: copy.deepcopy(m.state_dict())
                             for name, m in self.modules.items()}
        if value > self.best:
            self.best = value
            self.bad_rounds = 0
            return False
        self.bad_rounds += 1
        return self.bad_rounds >= self.patience

    def restore(self):
        if self.snapshot is not None:
            for name, m in self.modules.items():
                m.load_state_dict(self.snapshot[name])


def _derived_seed(base: int, *parts: int) -> int:
    out = base & 0x7FFFFFFF
    for p in parts:
        out = (out * 1000003 + p * 8191 + 0x9E3779B9) & 0x7FFFFFFF
    return out


def _batch_slices(n: int, batch_size: int):
    return [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def _final_queries(graph: DynamicGraph, nodes: np.ndarray):
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray([graph.final_timestamp(int(u)) for u in nodes], dtype=np.float64)
    return nodes, times


def scaled_ce_loss(logits: torch.Tensor, labels: torch.Tensor,
                   scales: torch.Tensor) -> torch.Tensor:
    """Per-sample cross-entropy scaled and averaged over the batch; the
    backbone-step objective applies beta * curriculum weight to pseudo
    entries and (1 - beta) to final-label entries through ``scales``."""
    return (scales * F.cross_entropy(logits, labels, reduction="none")).sum() / logits.shape[0]


class _Context:
    """Shared training wiring for one run."""

    def __init__(self, dataset, spec: MethodSpec, enc_cfg: EncoderConfig,
                 sampler_kind: str, split_config: Optional[dict]):
        self.dataset = dataset
        self.graph: DynamicGraph = dataset.graph
        self.spec = spec
        self.enc_cfg = enc_cfg
        split_config = split_config or {}
        self.split = split_nodes(
            self.graph, dataset.labels_dict(),
            ratios=tuple(split_config.get("ratios", (0.70, 0.15, 0.15))),
            seed=int(split_config.get("seed", spec.seed)),
            mode=split_config.get("mode", "chronological"))
        self.sampler = make_sampler(self.graph, sampler_kind)
        self.labels = dataset.final_labels
        self.caches: dict = {}
        self.encoder = build_encoder(enc_cfg, self.graph)
        self.decoder = Decoder(enc_cfg.output_dim, dataset.metadata.class_count,
                               hidden_dim=spec.decoder_hidden,
                               dropout=spec.decoder_dropout)
        self.metric_name = "auc" if dataset.metadata.class_count == 2 else "acc"

    def embed(self, encoder, nodes, times, cache_key=None, grad=False):
        if grad:
            return embed_nodes(encoder, self.graph, self.sampler, nodes, times,
                               self.enc_cfg, batch_size=self.spec.batch_size,
                               cache=self.caches, cache_key=cache_key)
        was_training = encoder.training
        encoder.eval()
        try:
            with torch.no_grad():
                return embed_nodes(encoder, self.graph, self.sampler, nodes, times,
                                   self.enc_cfg, batch_size=self.spec.batch_size,
                                   cache=self.caches, cache_key=cache_key)
        finally:
            if was_training:
                encoder.train()

    def node_metric(self, probs: np.ndarray, labels: np.ndarray) -> float:
        if self.metric_name == "auc":
            try:
                return auc(probs[:, 1], labels)
            except ValueError:  # degenerate single-class validation slice
                return accuracy(probs.argmax(axis=1), labels)
        return accuracy(probs.argmax(axis=1), labels)

    def val_metric(self, encoder=None, decoder=None) -> float:
        encoder = encoder or self.encoder
        decoder = decoder or self.decoder
        nodes, times = _final_queries(self.graph, self.split.val_nodes)
        emb = self.embed(encoder, nodes, times, cache_key="val_final")
        probs = _decode_probs(decoder, emb)
        return self.node_metric(probs, self.labels[nodes])


def _decode_probs(decoder: Decoder, emb: torch.Tensor) -> np.ndarray:
    was_training = decoder.training
    decoder.eval()
    try:
        with torch.no_grad():
            return torch.softmax(decoder(emb), dim=-1).cpu().numpy()
    finally:
        if was_training:
            decoder.train()


def warmup(ctx: _Context, history: TrainHistory):
    """Link-prediction pretraining of the backbone on pre-boundary events.

    Chronological mini-batches, one corrupted destination per positive; a
    throwaway pair scorer provides the logits. Early stopping on the link
    AUC over the last 15% of pre-boundary events, with fixed negatives so
    epochs are comparable.
    """
    spec, graph = ctx.spec, ctx.graph
    positions = np.flatnonzero(graph.timestamps <= ctx.split.boundary_time)
    if positions.size < 8:
        raise ValueError("too few pre-boundary events to warm up on")
    split_at = max(int(0.85 * positions.size), 1)
    train_pos, val_pos = positions[:split_at], positions[split_at:]
    if val_pos.size == 0:
        train_pos, val_pos = positions[:-1], positions[-1:]

    scorer = _LinkScorer(ctx.encoder.output_dim)
    optimizer = torch.optim.Adam([*ctx.encoder.parameters(), *scorer.parameters()],
                                 lr=spec.learning_rate)
    stopper = _EarlyStopper(spec.patience, {"encoder": ctx.encoder, "scorer": scorer})
    val_negatives = negative_sample(graph, graph.sources[val_pos],
                                    graph.destinations[val_pos],
                                    seed=_derived_seed(spec.seed, 777))

    batches = _batch_slices(train_pos.size, spec.batch_size)
    for epoch in range(spec.warmup_epoch_count):
        ctx.encoder.train()
        scorer.train()
        epoch_losses = []
        for bi, (lo, hi) in enumerate(batches):
            sel = train_pos[lo:hi]
            t = graph.timestamps[sel]
            h_u = ctx.embed(ctx.encoder, graph.sources[sel], t,
                            cache_key=("warm_u", bi), grad=True)
            h_v = ctx.embed(ctx.encoder, graph.destinations[sel], t,
                            cache_key=("warm_v", bi), grad=True)
            neg = negative_sample(graph, graph.sources[sel], graph.destinations[sel],
                                  seed=_derived_seed(spec.seed, epoch, bi))
            h_neg = ctx.embed(ctx.encoder, neg, t, grad=True)
            logits = torch.cat([scorer(h_u, h_v), scorer(h_u, h_neg)])
            targets = torch.cat([torch.ones(sel.size), torch.zeros(sel.size)])
            loss = F.binary_cross_entropy_with_logits(logits, targets)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"warmup diverged at epoch {epoch}, batch {bi}: loss={loss.item()}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))

        val_auc = _link_val_auc(ctx, scorer, val_pos, val_negatives)
        history.warmup_losses.append(float(np.mean(epoch_losses)))
        history.warmup_val_auc.append(val_auc)
        if stopper.update(val_auc):
            break
    stopper.restore()
    return ctx.encoder


def _link_val_auc(ctx: _Context, scorer: _LinkScorer, val_pos: np.ndarray,
                  val_negatives: np.ndarray) -> float:
    graph = ctx.graph
    t = graph.timestamps[val_pos]
    scorer.eval()
    with torch.no_grad():
        h_u = ctx.embed(ctx.encoder, graph.sources[val_pos], t, cache_key="warm_val_u")
        h_v = ctx.embed(ctx.encoder, graph.destinations[val_pos], t, cache_key="warm_val_v")
        h_n = ctx.embed(ctx.encoder, val_negatives, t, cache_key="warm_val_n")
        scores = torch.sigmoid(torch.cat([scorer(h_u, h_v), scorer(h_u, h_n)])).numpy()
    scorer.train()
    labels = np.concatenate([np.ones(val_pos.size), np.zeros(val_pos.size)])
    return auc(scores, labels)


def e_step(ctx: _Context, history: TrainHistory, iteration: int,
           pseudo: Optional[PseudoLabelSet] = None):
    """Fit the decoder on train-node final labels under a frozen backbone.

    With ``spec.alpha`` > 0 (the standard-EM baseline), pre-boundary pseudo
    entries join the objective scaled by alpha while the final-label term is
    scaled by 1 - alpha; at alpha = 0 the pseudo entries contribute nothing
    and are skipped entirely. Backbone parameters are never touched.
    """
    spec = ctx.spec
    train_nodes, train_times = _final_queries(ctx.graph, ctx.split.train_nodes)
    if train_nodes.size == 0:
        raise ValueError("no labeled train nodes for the decoder step")
    emb_train = ctx.embed(ctx.encoder, train_nodes, train_times, cache_key="train_final")
    y_train = torch.from_numpy(ctx.labels[train_nodes])

    # the first decoder step of a run has no pseudo-labels yet; the mixture
    # kicks in once a generation exists
    use_pseudo = spec.alpha > 0.0 and pseudo is not None
    if use_pseudo:
        if len(pseudo) == 0:
            raise ValueError("alpha > 0 requires a non-empty pseudo-label set")
        emb_pseudo = ctx.embed(ctx.encoder, pseudo.nodes, pseudo.times,
                               cache_key="pseudo_index")
        y_pseudo = torch.from_numpy(pseudo.labels)

    # the encoder is frozen for the whole step, so the validation embeddings
    # are computed once; early stopping watches the validation log-likelihood
    # (the protocol metric can saturate long before the head is calibrated)
    val_nodes, val_times = _final_queries(ctx.graph, ctx.split.val_nodes)
    emb_val = ctx.embed(ctx.encoder, val_nodes, val_times, cache_key="val_final")
    y_val = torch.from_numpy(ctx.labels[val_nodes])

    optimizer = torch.optim.Adam(ctx.decoder.parameters(), lr=spec.learning_rate)
    stopper = _EarlyStopper(spec.patience, {"decoder": ctx.decoder})
    final_batches = _batch_slices(train_nodes.size, spec.batch_size)
    epoch_losses = []
    for _epoch in range(spec.decoder_epoch_count):
        ctx.decoder.train()
        losses = []
        for lo, hi in final_batches:
            logits = ctx.decoder(emb_train[lo:hi])
            scale = torch.full((hi - lo,), 1.0 - spec.alpha)
            loss = scaled_ce_loss(logits, y_train[lo:hi], scale)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        if use_pseudo:
            for lo, hi in _batch_slices(len(pseudo), spec.batch_size):
                logits = ctx.decoder(emb_pseudo[lo:hi])
                scale = torch.full((hi - lo,), spec.alpha)
                loss = scaled_ce_loss(logits, y_pseudo[lo:hi], scale)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(float(loss.detach()))
        epoch_losses.append(float(np.mean(losses)))
        ctx.decoder.eval()
        with torch.no_grad():
            val_nll = float(F.cross_entropy(ctx.decoder(emb_val), y_val))
        if stopper.update(-val_nll):
            break
    stopper.restore()
    history.record_step("e", iteration, epoch_losses)
    return ctx.decoder


def _mstep_sets(ctx: _Context, pseudo: PseudoLabelSet):
    """Combined chronological training set for the backbone step: weighted
    pseudo entries plus the train-node final labels."""
    spec = ctx.spec
    f_nodes, f_times = _final_queries(ctx.graph, ctx.split.train_nodes)
    nodes = np.concatenate([pseudo.nodes, f_nodes])
    times = np.concatenate([pseudo.times, f_times])
    labels = np.concatenate([pseudo.labels, ctx.labels[f_nodes]])
    scales = np.concatenate([spec.beta * pseudo.weights,
                             np.full(f_nodes.size, 1.0 - spec.beta)])
    is_final = np.concatenate([np.zeros(len(pseudo), dtype=np.int64),
                               np.ones(f_nodes.size, dtype=np.int64)])
    order = np.lexsort((is_final, nodes, times))
    return nodes[order], times[order], labels[order], scales[order]


def m_step(ctx: _Context, history: TrainHistory, iteration: int,
           pseudo: PseudoLabelSet, trainable_decoder: Optional[Decoder] = None):
    """Fit the backbone through the frozen decoder on the weighted mixture
    of pseudo-labels (scaled beta * w) and final labels (scaled 1 - beta).

    ``trainable_decoder`` (the two-decoder variant) joins the optimization
    in place of the frozen one inside the cascade; the primary decoder's
    parameters are bit-identical afterwards either way.
    """
    spec = ctx.spec
    if len(pseudo) == 0 and spec.beta >= 1.0:
        raise ValueError("beta = 1 with an empty pseudo-label set leaves no objective")

    nodes, times, labels, scales = _mstep_sets(ctx, pseudo)
    y = torch.from_numpy(labels)
    s = torch.from_numpy(scales).float()

    cascade = trainable_decoder if trainable_decoder is not None else ctx.decoder
    for p in ctx.decoder.parameters():
        p.requires_grad_(False)
    ctx.decoder.eval()
    params = list(ctx.encoder.parameters())
    if trainable_decoder is not None:
        params += list(trainable_decoder.parameters())
    optimizer = torch.optim.Adam(params, lr=spec.learning_rate)
    tracked = {"encoder": ctx.encoder}
    if trainable_decoder is not None:
        tracked["decoder2"] = trainable_decoder
    stopper = _EarlyStopper(spec.patience, tracked)

    batches = _batch_slices(nodes.size, spec.batch_size)
    epoch_losses = []
    try:
        for _epoch in range(spec.epochs_per_step):
            ctx.encoder.train()
            if trainable_decoder is not None:
                trainable_decoder.train()
            losses = []
            for bi, (lo, hi) in enumerate(batches):
                emb = ctx.embed(ctx.encoder, nodes[lo:hi], times[lo:hi],
                                cache_key=("mstep", bi), grad=True)
                loss = scaled_ce_loss(cascade(emb), y[lo:hi], s[lo:hi])
                if not torch.isfinite(loss):
                    raise FloatingPointError(
                        f"backbone step diverged at epoch {_epoch}, batch {bi}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(float(loss.detach()))
            epoch_losses.append(float(np.mean(losses)))
            if stopper.update(ctx.val_metric(decoder=cascade)):
                break
        stopper.restore()
    finally:
        for p in ctx.decoder.parameters():
            p.requires_grad_(True)
    history.record_step("m", iteration, epoch_losses)
    return ctx.encoder


def _joint_sets(ctx: _Context, method: str, pseudo: Optional[PseudoLabelSet]):
    spec, graph = ctx.spec, ctx.graph
    boundary = ctx.split.boundary_time
    if method == "cft":
        nodes_l, times_l, labels_l, scales_l = [], [], [], []
        for u in ctx.split.train_nodes:
            y_u = int(ctx.labels[u])
            for t in graph.timeline(int(u)):
                if t <= boundary:
                    nodes_l.append(int(u))
                    times_l.append(float(t))
                    labels_l.append(y_u)
                    scales_l.append(1.0)
    elif method == "dls":
        dynamic = ctx.dataset.dynamic_labels
        if dynamic is None:
            raise UnsupportedMethodError(
                "dynamic-label supervision needs a dataset with dynamic labels")
        nodes_l, times_l, labels_l, scales_l = [], [], [], []
        for (u, t), y in dynamic.items():
            if t <= boundary:
                nodes_l.append(int(u))
                times_l.append(float(t))
                labels_l.append(int(y))
                scales_l.append(1.0)
    elif method == "npl":
        assert pseudo is not None
        f_nodes, f_times = _final_queries(graph, ctx.split.train_nodes)
        nodes = np.concatenate([pseudo.nodes, f_nodes])
        times = np.concatenate([pseudo.times, f_times])
        labels = np.concatenate([pseudo.labels, ctx.labels[f_nodes]])
        scales = np.concatenate([spec.beta * pseudo.weights,
                                 np.full(f_nodes.size, 1.0 - spec.beta)])
        order = np.lexsort((nodes, times))
        return nodes[order], times[order], labels[order], scales[order]
    else:
        raise ValueError(method)
    nodes = np.asarray(nodes_l, dtype=np.int64)
    times = np.asarray(times_l, dtype=np.float64)
    labels = np.asarray(labels_l, dtype=np.int64)
    scales = np.asarray(scales_l, dtype=np.float64)
    order = np.lexsort((nodes, times))
    return nodes[order], times[order], labels[order], scales[order]


def _joint_phase(ctx: _Context, history: TrainHistory, method: str):
    """Single supervised phase co-training backbone and decoder (the
    copy-final, dynamic-label and joint-pseudo-label baselines)."""
    spec = ctx.spec
    optimizer = torch.optim.Adam([*ctx.encoder.parameters(), *ctx.decoder.parameters()],
                                 lr=spec.learning_rate)
    stopper = _EarlyStopper(spec.patience, {"encoder": ctx.encoder, "decoder": ctx.decoder})

    pseudo: Optional[PseudoLabelSet] = None
    if method == "npl":
        pseudo = generate_pseudo_labels(ctx.graph, ctx.encoder, ctx.decoder, ctx.split,
                                        ctx.sampler, ctx.enc_cfg,
                                        batch_size=spec.batch_size, cache=ctx.caches)
    nodes, times, labels, scales = _joint_sets(ctx, method, pseudo)
    if nodes.size == 0:
        raise ValueError(f"{method}: empty supervised training set")
    cache_tag = "joint"

    epoch_losses = []
    for epoch in range(spec.epochs_per_step):
        if method == "npl" and epoch > 0 and epoch % spec.npl_refresh_every == 0:
            pseudo = generate_pseudo_labels(ctx.graph, ctx.encoder, ctx.decoder,
                                            ctx.split, ctx.sampler, ctx.enc_cfg,
                                            batch_size=spec.batch_size, cache=ctx.caches)
            nodes, times, labels, scales = _joint_sets(ctx, method, pseudo)
        y = torch.from_numpy(labels)
        s = torch.from_numpy(scales).float()
        ctx.encoder.train()
        ctx.decoder.train()
        losses = []
        for bi, (lo, hi) in enumerate(_batch_slices(nodes.size, spec.batch_size)):
            emb = ctx.embed(ctx.encoder, nodes[lo:hi], times[lo:hi],
                            cache_key=(cache_tag, bi), grad=True)
            loss = scaled_ce_loss(ctx.decoder(emb), y[lo:hi], s[lo:hi])
            if not torch.isfinite(loss):
                raise FloatingPointError(f"{method} phase diverged at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        epoch_losses.append(float(np.mean(losses)))
        if stopper.update(ctx.val_metric()):
            break
    stopper.restore()
    history.record_step(method, 0, epoch_losses)


def _predictions(ctx: _Context):
    """Argmax class per post-boundary node (the evaluation target set)."""
    nodes = np.concatenate([ctx.split.val_nodes, ctx.split.test_nodes])
    nodes, times = _final_queries(ctx.graph, nodes)
    emb = ctx.embed(ctx.encoder, nodes, times, cache_key="eval_final")
    probs = _decode_probs(ctx.decoder, emb)
    labels = probs.argmax(axis=1)
    pred_labels = {int(u): int(labels[i]) for i, u in enumerate(nodes)}
    pred_probs = {int(u): [float(x) for x in probs[i]] for i, u in enumerate(nodes)}
    return pred_labels, pred_probs, nodes, probs


def run_method(dataset, spec: MethodSpec, enc_cfg: EncoderConfig,
               sampler_kind: str = "reference",
               split_config: Optional[dict] = None,
               out_dir: Optional[str] = None) -> RunResult:
    """Train one method end to end and evaluate on the held-out finals.

    Dispatch:
      ptcl / sem / ptcl2d: warmup, then alternate decoder and backbone steps
        with pseudo-labels regenerated and re-weighted every iteration, EM
        patience on the validation metric, best checkpoint kept;
      cft / dls / npl: warmup, then one joint supervised phase.

    Fully deterministic given (spec.seed, dataset, sampler choice).
    """
    torch.manual_seed(spec.seed)
    ctx = _Context(dataset, spec, enc_cfg, sampler_kind, split_config)
    history = TrainHistory(metric_name=ctx.metric_name)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    t_start = time.perf_counter()
    warmup(ctx, history)
    history.timings["warmup_seconds"] = time.perf_counter() - t_start

    last_pseudo: Optional[PseudoLabelSet] = None
    if spec.method in ("cft", "dls", "npl"):
        t0 = time.perf_counter()
        _joint_phase(ctx, history, spec.method)
        history.timings["joint_seconds"] = time.perf_counter() - t0
        val = ctx.val_metric()
        history.val_metrics.append(val)
        history.tau_values.append(0)
        history.best_iteration = 0
        history.best_val = val
    else:
        decoder2 = None
        if spec.method == "ptcl2d":
            decoder2 = Decoder(enc_cfg.output_dim, dataset.metadata.class_count,
                               hidden_dim=spec.decoder_hidden,
                               dropout=spec.decoder_dropout)
        curriculum = CurriculumState(iteration=0, decay_rate=spec.gamma,
                                     strategy=spec.curriculum_strategy,
                                     cst_threshold=spec.cst_threshold,
                                     est_threshold=spec.est_threshold)
        best = _EarlyStopper(spec.em_patience,
                             {"encoder": ctx.encoder, "decoder": ctx.decoder})

        e_step(ctx, history, iteration=0)
        val = ctx.val_metric()
        history.val_metrics.append(val)
        history.tau_values.append(0)
        stop = best.update(val)
        history.best_iteration = 0
        history.best_val = best.best

        for tau in range(1, spec.em_iterations + 1):
            t_iter = time.perf_counter()
            pseudo = generate_pseudo_labels(ctx.graph, ctx.encoder, ctx.decoder,
                                            ctx.split, ctx.sampler, ctx.enc_cfg,
                                            iteration=tau, batch_size=spec.batch_size,
                                            cache=ctx.caches)
            curriculum.iteration = tau
            if spec.curriculum_strategy == "est":
                curriculum.record_generation(pseudo)
            pseudo = assign_weights(pseudo, ctx.graph, curriculum)
            last_pseudo = pseudo
            if out_dir:
                dump_pseudo_labels(os.path.join(out_dir, f"pseudo_iter_{tau}.csv"), pseudo)

            m_step(ctx, history, iteration=tau, pseudo=pseudo,
                   trainable_decoder=decoder2)
            e_step(ctx, history, iteration=tau, pseudo=pseudo)
            val = ctx.val_metric()
            history.val_metrics.append(val)
            history.tau_values.append(tau)
            history.iteration_seconds.append(time.perf_counter() - t_iter)
            improved = val > best.best
            stop = best.update(val)
            if improved:
                history.best_iteration = tau
            history.best_val = best.best
            if stop:
                break
        best.restore()

    history.timings["total_seconds"] = time.perf_counter() - t_start

    pred_labels, pred_probs, eval_nodes, eval_probs = _predictions(ctx)
    test_mask = np.isin(eval_nodes, ctx.split.test_nodes)
    val_mask = np.isin(eval_nodes, ctx.split.val_nodes)
    test_metric = ctx.node_metric(eval_probs[test_mask], ctx.labels[eval_nodes[test_mask]])
    val_metric = ctx.node_metric(eval_probs[val_mask], ctx.labels[eval_nodes[val_mask]])

    result = RunResult(history=history, split=ctx.split, metric_name=ctx.metric_name,
                       test_metric=test_metric, val_metric=val_metric,
                       predicted_labels=pred_labels, predicted_probs=pred_probs,
                       encoder=ctx.encoder, decoder=ctx.decoder,
                       last_pseudo=last_pseudo)
    if out_dir:
        _write_run_artifacts(out_dir, dataset, spec, enc_cfg, result)
    return result


def _write_run_artifacts(out_dir: str, dataset, spec: MethodSpec,
                         enc_cfg: EncoderConfig, result: RunResult):
    from .encoders import save_checkpoint

    result.history.save_jsonl(os.path.join(out_dir, "history.jsonl"))
    save_checkpoint(os.path.join(out_dir, "checkpoint.npz"),
                    {"encoder": result.encoder, "decoder": result.decoder},
                    meta={"method": spec.method, "seed": spec.seed})
    with open(os.path.join(out_dir, "predictions.csv"), "w") as fh:
        fh.write("node_id,predicted_label," +
                 ",".join(f"p{c}" for c in range(dataset.metadata.class_count)) + "\n")
        for u in sorted(result.predicted_labels):
            probs = ",".join(repr(p) for p in result.predicted_probs[u])
            fh.write(f"{u},{result.predicted_labels[u]},{probs}\n")
    with open(os.path.join(out_dir, "split.json"), "w") as fh:
        json.dump(result.split.to_dict(), fh, sort_keys=True)
    summary = {
        "method": spec.method, "seed": spec.seed,
        "metric_name": result.metric_name,
        "test_metric": result.test_metric, "val_metric": result.val_metric,
        "best_iteration": result.history.best_iteration,
        "spec": asdict(spec), "encoder": asdict(enc_cfg),
        "timings": result.history.timings,
    }
    with open(os.path.join(out_dir, "result.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
