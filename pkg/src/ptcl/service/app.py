"""FastAPI application exposing prepare / train / evaluate / compare /
analyze over HTTP. Training and comparison run as background jobs; the
other endpoints answer synchronously."""

from __future__ import annotations

import json
import os
from dataclasses import replace

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import RunConfig, load_dataset
from ..evaluation import auc, accuracy, consistency, consistency_histogram
from ..graph import SplitSpec, split_nodes
from .jobs import JobRegistry
from .models import (AnalyzeRequest, AnalyzeResponse, CompareRequest,
                     EvaluateRequest, EvaluateResponse, HealthResponse,
                     JobAccepted, PrepareRequest, PrepareResponse, RunStatus,
                     TrainRequest)


def create_app() -> FastAPI:
    app = FastAPI(title="ptcl", version=__version__,
                  description="Label-limited dynamic node classification service")
    app.state.jobs = JobRegistry(workers=1)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.post("/datasets/prepare", response_model=PrepareResponse)
    def prepare(req: PrepareRequest):
        from ..config import DatasetConfig
        from ..datasets import save_generic

        try:
            if req.synthetic is not None:
                cfg = DatasetConfig(kind="synthetic", synthetic=req.synthetic, name=req.name)
            elif req.jodie_path:
                cfg = DatasetConfig(kind="jodie", path=req.jodie_path, name=req.name)
            else:
                cfg = DatasetConfig(kind="generic", path=req.generic_path, name=req.name)
            dataset = load_dataset(cfg)
            split = split_nodes(dataset.graph, dataset.labels_dict(),
                                ratios=req.split.ratios, seed=req.split_seed,
                                mode=req.split.mode)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

        os.makedirs(req.out_dir, exist_ok=True)
        save_generic(dataset, req.out_dir, include_dynamic=req.include_dynamic)
        with open(os.path.join(req.out_dir, "split.json"), "w") as fh:
            json.dump(split.to_dict(), fh, sort_keys=True)
        files = sorted(os.listdir(req.out_dir))
        return PrepareResponse(
            out_dir=req.out_dir, files=files,
            node_count=dataset.graph.node_count,
            event_count=dataset.graph.event_count,
            labeled_count=int(dataset.labeled_nodes().size),
            class_count=dataset.metadata.class_count,
            boundary_time=split.boundary_time,
        )

    def _train_job(config: RunConfig) -> dict:
        from dataclasses import asdict

        import torch

        from ..training import run_method

        if config.torch_threads:
            torch.set_num_threads(config.torch_threads)
        dataset = load_dataset(config.dataset)
        result = run_method(dataset, config.to_method_spec(),
                            config.encoder.to_encoder_config(),
                            sampler_kind=config.sampler,
                            split_config=config.split_dict(),
                            out_dir=config.output_dir)
        if config.output_dir:
            # the manifest replays the run: the full config with resolved
            # hyperparameters, dataset identity, tool version and timings
            manifest = {
                "tool_version": __version__,
                "dataset": {"name": dataset.metadata.name,
                            "kind": config.dataset.kind,
                            "path": config.dataset.path},
                "output_dir": config.output_dir,
                "config": config.model_dump(),
                "resolved_method": asdict(config.to_method_spec()),
                "resolved_encoder": asdict(config.encoder.to_encoder_config()),
                "timings": result.history.timings,
            }
            with open(os.path.join(config.output_dir, "manifest.json"), "w") as fh:
                json.dump(manifest, fh, sort_keys=True, indent=2)
        return {
            "metric_name": result.metric_name,
            "test_metric": result.test_metric,
            "val_metric": result.val_metric,
            "best_iteration": result.history.best_iteration,
            "val_curve": result.history.val_metrics,
            "timings": result.history.timings,
        }

    @app.post("/runs", response_model=JobAccepted, status_code=202)
    def submit_run(req: TrainRequest):
        try:
            req.config.to_method_spec()  # full cross-field validation up front
            req.config.encoder.to_encoder_config()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        record = app.state.jobs.submit(
            "train", lambda: _train_job(req.config), out_dir=req.config.output_dir)
        return JobAccepted(run_id=record.run_id, state=record.state)

    @app.get("/runs/{run_id}", response_model=RunStatus)
    def run_status(run_id: str):
        record = app.state.jobs.get(run_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown run id {run_id!r}")
        return RunStatus(run_id=record.run_id, state=record.state, kind=record.kind,
                         error=record.error, result=record.result,
                         out_dir=record.out_dir, seconds=record.seconds)

    @app.get("/runs", response_model=list[RunStatus])
    def list_runs():
        return [RunStatus(run_id=r.run_id, state=r.state, kind=r.kind, error=r.error,
                          result=r.result, out_dir=r.out_dir, seconds=r.seconds)
                for r in app.state.jobs.all()]

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest):
        result_path = os.path.join(req.run_dir, "result.json")
        if not os.path.exists(result_path):
            raise HTTPException(status_code=404,
                                detail=f"no run summary at {result_path}")
        with open(result_path) as fh:
            summary = json.load(fh)
        if req.dataset_path:
            try:
                metric_name, test_metric = _recompute_test_metric(req.run_dir,
                                                                  req.dataset_path)
            except FileNotFoundError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
            summary["metric_name"] = metric_name
            summary["test_metric"] = test_metric
        plot_path = None
        if req.plot_path:
            try:
                plot_path = _plot_convergence(req.run_dir, summary["metric_name"],
                                              req.plot_path)
            except FileNotFoundError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
        return EvaluateResponse(run_dir=req.run_dir,
                                metric_name=summary["metric_name"],
                                test_metric=summary["test_metric"],
                                val_metric=summary["val_metric"],
                                best_iteration=summary["best_iteration"],
                                plot_path=plot_path)

    def _compare_job(req: CompareRequest) -> dict:
        import torch

        from ..evaluation import multi_seed_run

        if req.config.torch_threads:
            torch.set_num_threads(req.config.torch_threads)
        dataset = load_dataset(req.config.dataset)
        enc_cfg = req.config.encoder.to_encoder_config()
        rows = []
        variants = [(m, None) for m in req.methods]
        if req.naive_variant:
            variants.append(("ptcl", "naive"))
        for method, strategy in variants:
            spec = replace(req.config.to_method_spec(), method=method)
            if strategy:
                spec = replace(spec, curriculum_strategy=strategy)
            report = multi_seed_run(spec, dataset, enc_cfg, req.seeds,
                                    sampler_kind=req.config.sampler,
                                    split_config=req.config.split_dict())
            label = method if strategy is None else f"{method}[{strategy}]"
            rows.append({"method": label, **report.to_dict()})
        table = {"dataset": req.config.dataset.name or req.config.dataset.kind,
                 "seeds": req.seeds, "rows": rows}
        if req.config.output_dir:
            os.makedirs(req.config.output_dir, exist_ok=True)
            with open(os.path.join(req.config.output_dir, "compare.json"), "w") as fh:
                json.dump(table, fh, sort_keys=True, indent=2)
        return table

    @app.post("/compare", response_model=JobAccepted, status_code=202)
    def submit_compare(req: CompareRequest):
        from ..training import METHODS

        for m in req.methods:
            if m not in METHODS:
                raise HTTPException(status_code=422, detail=f"unknown method {m!r}")
        record = app.state.jobs.submit(
            "compare", lambda: _compare_job(req), out_dir=req.config.output_dir)
        return JobAccepted(run_id=record.run_id, state=record.state)

    @app.post("/analyze", response_model=AnalyzeResponse)
    def analyze(req: AnalyzeRequest):
        try:
            if req.dump_path:
                source = req.dump_path
                values = _dump_consistencies(req.dump_path)
            else:
                source = req.dataset_path
                values = _dataset_consistencies(req.dataset_path, req.node_set)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        if not values:
            raise HTTPException(status_code=422,
                                detail="no nodes with at least two timestamps")
        counts, edges = consistency_histogram(values, bins=req.bins)
        plot_path = None
        if req.plot_path:
            plot_path = _plot_histogram(values, req.bins, req.plot_path)
        return AnalyzeResponse(source=source, node_count=len(values),
                               mean_consistency=float(np.mean(values)),
                               histogram_counts=counts, histogram_edges=edges,
                               plot_path=plot_path)

    return app


def _recompute_test_metric(run_dir: str, dataset_path: str):
    from ..config import DatasetConfig

    dataset = load_dataset(DatasetConfig(kind="generic", path=dataset_path))
    with open(os.path.join(run_dir, "split.json")) as fh:
        split = SplitSpec.from_dict(json.load(fh))
    preds: dict[int, float] = {}
    pred_labels: dict[int, int] = {}
    path = os.path.join(run_dir, "predictions.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            parts = line.strip().split(",")
            node = int(parts[0])
            pred_labels[node] = int(parts[1])
            preds[node] = float(parts[3]) if len(parts) > 3 else float(parts[2])
    test = [int(u) for u in split.test_nodes if int(u) in preds]
    labels = dataset.final_labels[test]
    if dataset.metadata.class_count == 2:
        return "auc", auc(np.asarray([preds[u] for u in test]), labels)
    return "acc", accuracy(np.asarray([pred_labels[u] for u in test]), labels)


def _dump_consistencies(path: str) -> list[float]:
    from ..decoder import load_pseudo_labels

    pseudo = load_pseudo_labels(path)
    per_node: dict[int, list[tuple[float, int]]] = {}
    for u, t, y in zip(pseudo.nodes, pseudo.times, pseudo.labels):
        per_node.setdefault(int(u), []).append((float(t), int(y)))
    values = []
    for u, seq in per_node.items():
        seq.sort()
        if len(seq) >= 2:
            values.append(consistency([y for _, y in seq]))
    return values


def _dataset_consistencies(path: str, node_set: str) -> list[float]:
    from ..config import DatasetConfig

    dataset = load_dataset(DatasetConfig(kind="generic", path=path))
    if dataset.dynamic_labels is None:
        raise ValueError(f"{path}: dataset has no dynamic labels to analyze")
    nodes = (dataset.labeled_nodes() if node_set == "labeled"
             else np.arange(dataset.graph.node_count))
    values = []
    for u in nodes:
        tl = dataset.graph.timeline(int(u))
        if tl.size < 2:
            continue
        seq = [dataset.dynamic_labels[(int(u), float(t))] for t in tl]
        values.append(consistency(seq))
    return values


def _plot_convergence(run_dir: str, metric_name: str, plot_path: str) -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    history_path = os.path.join(run_dir, "history.jsonl")
    if not os.path.exists(history_path):
        raise FileNotFoundError(history_path)
    taus, values = [], []
    with open(history_path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("kind") == "iteration":
                taus.append(rec["tau"])
                values.append(rec["val_metric"])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(taus, values, marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"validation {metric_name}")
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(plot_path)), exist_ok=True)
    fig.savefig(plot_path, dpi=120)
    plt.close(fig)
    return plot_path


def _plot_histogram(values, bins: int, plot_path: str) -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(values, bins=bins, range=(0, 1), edgecolor="black")
    ax.set_xlabel("consistency")
    ax.set_ylabel("nodes")
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(plot_path)), exist_ok=True)
    fig.savefig(plot_path, dpi=120)
    plt.close(fig)
    return plot_path
