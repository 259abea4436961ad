"""Request/response models for the HTTP surface."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from ..config import RunConfig, SplitConfig, SyntheticConfig


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class PrepareRequest(BaseModel):
    """Materialize a dataset (and its split manifest) in the generic format."""

    out_dir: str
    synthetic: Optional[SyntheticConfig] = None
    jodie_path: Optional[str] = None
    generic_path: Optional[str] = None
    name: Optional[str] = None
    split: SplitConfig = Field(default_factory=SplitConfig)
    split_seed: int = 0
    include_dynamic: bool = True

    @model_validator(mode="after")
    def _one_source(self):
        sources = [self.synthetic is not None, bool(self.jodie_path), bool(self.generic_path)]
        if sum(sources) != 1:
            raise ValueError("exactly one of synthetic / jodie_path / generic_path is required")
        return self


class PrepareResponse(BaseModel):
    out_dir: str
    files: list[str]
    node_count: int
    event_count: int
    labeled_count: int
    class_count: int
    boundary_time: float


class TrainRequest(BaseModel):
    config: RunConfig

    @model_validator(mode="after")
    def _needs_output(self):
        if not self.config.output_dir:
            raise ValueError("config.output_dir is required for training runs")
        return self


class JobAccepted(BaseModel):
    run_id: str
    state: str


class RunStatus(BaseModel):
    run_id: str
    state: Literal["queued", "running", "done", "failed"]
    kind: str
    error: Optional[str] = None
    result: Optional[dict] = None
    out_dir: Optional[str] = None
    seconds: Optional[float] = None


class EvaluateRequest(BaseModel):
    run_dir: str
    dataset_path: Optional[str] = None  # re-evaluate against a dataset directory
    plot_path: Optional[str] = None     # write the convergence curve here


class EvaluateResponse(BaseModel):
    run_dir: str
    metric_name: str
    test_metric: float
    val_metric: float
    best_iteration: int
    plot_path: Optional[str] = None


class CompareRequest(BaseModel):
    """Multi-seed, multi-method comparison on one dataset."""

    config: RunConfig
    methods: list[str]
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    naive_variant: bool = False  # include the all-pseudo-label ablation

    @model_validator(mode="after")
    def _validate(self):
        if not self.methods:
            raise ValueError("at least one method required")
        if not self.seeds:
            raise ValueError("at least one seed required")
        return self


class AnalyzeRequest(BaseModel):
    """Consistency analysis over pseudo-label dumps or dataset dynamic labels."""

    dump_path: Optional[str] = None
    dataset_path: Optional[str] = None
    bins: int = 10
    plot_path: Optional[str] = None
    node_set: Literal["all", "labeled"] = "labeled"

    @model_validator(mode="after")
    def _one_source(self):
        if bool(self.dump_path) == bool(self.dataset_path):
            raise ValueError("exactly one of dump_path / dataset_path is required")
        return self


class AnalyzeResponse(BaseModel):
    source: str
    node_count: int
    mean_consistency: float
    histogram_counts: list[int]
    histogram_edges: list[float]
    plot_path: Optional[str] = None
