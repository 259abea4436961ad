"""Run configuration schema: validated models for dataset selection, node
splitting, method hyperparameters and encoder architecture, plus loading
from YAML/JSON files with defaults resolved per dataset."""

from __future__ import annotations

import json
import os
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from .datasets import DriftConfig
from .encoders import EncoderConfig
from .training import MethodSpec

# published per-dataset (beta, gamma) defaults for the two encoder kinds
BETA_GAMMA_DEFAULTS: dict[tuple[str, str], tuple[float, float]] = {
    ("tgat", "wikipedia"): (0.9, 0.8),
    ("tgat", "reddit"): (0.9, 0.1),
    ("tgat", "dsub"): (0.7, 0.2),
    ("tgat", "cooag"): (0.2, 0.9),
    ("graphmixer", "wikipedia"): (0.5, 1.3),
    ("graphmixer", "reddit"): (0.5, 0.1),
    ("graphmixer", "dsub"): (0.5, 0.1),
    ("graphmixer", "cooag"): (0.5, 0.4),
}
SYNTHETIC_BETA_GAMMA = (0.5, 0.5)


class SyntheticConfig(BaseModel):
    """Mirror of the drift generator's knobs."""

    node_count: int = 2000
    event_count: int = 40000
    class_count: int = 2
    switch_probability: float = 0.02
    homophily: float = 0.8
    feature_noise: float = 0.5
    seed: int = 0
    feature_dim: int = 8
    signal_scale: float = 0.3
    node_signal_scale: float = 0.3
    activity_span: tuple[float, float] = (0.1, 0.5)
    onset_bias: float = 0.95
    initial_class_weights: Optional[tuple[float, ...]] = None

    def to_drift_config(self) -> DriftConfig:
        return DriftConfig(**self.model_dump())


class DatasetConfig(BaseModel):
    kind: Literal["generic", "jodie", "synthetic"] = "generic"
    path: Optional[str] = None          # directory (generic) or csv (jodie)
    name: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None

    @model_validator(mode="after")
    def _check_source(self):
        if self.kind == "synthetic":
            if self.synthetic is None:
                object.__setattr__(self, "synthetic", SyntheticConfig())
        elif not self.path:
            raise ValueError(f"dataset kind {self.kind!r} needs a path")
        return self


class SplitConfig(BaseModel):
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    mode: Literal["chronological", "stratified"] = "chronological"
    seed: Optional[int] = None          # defaults to the method seed

    @field_validator("ratios")
    @classmethod
    def _ratios_sum(cls, value):
        if abs(sum(value) - 1.0) > 1e-9 or any(r <= 0 for r in value):
            raise ValueError("ratios must be positive and sum to 1")
        return value


class MethodConfig(BaseModel):
    method: Literal["ptcl", "cft", "dls", "npl", "ptcl2d", "sem"] = "ptcl"
    alpha: float = 0.0
    beta: Optional[float] = None        # None -> per-dataset default
    gamma: Optional[float] = None
    em_iterations: int = 10
    epochs_per_step: int = 100
    patience: int = 15
    learning_rate: float = 1e-4
    batch_size: int = 200
    seed: int = 0
    curriculum_strategy: Literal["temporal", "naive", "cst", "est"] = "temporal"
    cst_threshold: float = 0.8
    est_threshold: Optional[float] = None
    warmup_epochs: Optional[int] = None
    decoder_epochs: Optional[int] = None
    em_patience: int = 2
    npl_refresh_every: int = 1
    decoder_hidden: int = 80
    decoder_dropout: float = 0.1


class EncoderSection(BaseModel):
    encoder_kind: Literal["tgat", "graphmixer"] = "tgat"
    time_dim: int = 100
    output_dim: int = 172
    attention_heads: int = 2
    layers: int = 2
    neighbor_k: int = 20
    time_gap: int = 2000
    dropout: float = 0.1

    def to_encoder_config(self) -> EncoderConfig:
        return EncoderConfig(**self.model_dump())


class RunConfig(BaseModel):
    """Everything one training run needs; replaying an identical config with
    the same seed reproduces the run."""

    dataset: DatasetConfig
    split: SplitConfig = Field(default_factory=SplitConfig)
    method: MethodConfig = Field(default_factory=MethodConfig)
    encoder: EncoderSection = Field(default_factory=EncoderSection)
    sampler: Literal["reference", "accel"] = "reference"
    output_dir: Optional[str] = None
    torch_threads: Optional[int] = None

    def resolved_beta_gamma(self) -> tuple[float, float]:
        name = (self.dataset.name or "").lower()
        default = BETA_GAMMA_DEFAULTS.get((self.encoder.encoder_kind, name),
                                          SYNTHETIC_BETA_GAMMA)
        beta = self.method.beta if self.method.beta is not None else default[0]
        gamma = self.method.gamma if self.method.gamma is not None else default[1]
        return beta, gamma

    def to_method_spec(self) -> MethodSpec:
        beta, gamma = self.resolved_beta_gamma()
        fields = self.method.model_dump()
        fields["beta"] = beta
        fields["gamma"] = gamma
        return MethodSpec(**fields)

    def split_dict(self) -> dict:
        seed = self.split.seed if self.split.seed is not None else self.method.seed
        return {"ratios": self.split.ratios, "mode": self.split.mode, "seed": seed}


def load_run_config(path: str) -> RunConfig:
    """Parse and validate a YAML or JSON run config file."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        text = fh.read()
    data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return RunConfig.model_validate(data)


def load_dataset(config: DatasetConfig):
    from .datasets import generate_drift, load_generic, load_jodie_csv

    if config.kind == "synthetic":
        return generate_drift(config.synthetic.to_drift_config())
    if config.kind == "jodie":
        return load_jodie_csv(config.path, name=config.name)
    return load_generic(config.path, name=config.name)
