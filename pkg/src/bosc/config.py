"""Experiment configuration (YAML), validated with pydantic.

Unknown keys and malformed values are rejected as a whole; nothing is
silently replaced by a default.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .backdoor import InjectionConfig
from .data import PRESETS, Counts
from .inference import ScoreKind
from .processing import ProcessingOp
from .training import AugmentConfig, ConfigError, LossConfig, TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CountsSection(_Section):
    train: int = Field(600, ge=0)
    val: int = Field(100, ge=0)
    test: int = Field(100, ge=0)
    test_out: int = Field(100, ge=0)


class DatasetSection(_Section):
    manifest: Optional[str] = None
    preset: str = "s1-analog"
    root: Optional[str] = None
    seed: int = 0
    amplitude: float = Field(0.04, ge=0, lt=0.1)
    shape: List[int] = [32, 32, 3]
    counts: CountsSection = CountsSection()

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, v):
        if v not in PRESETS:
            raise ValueError(f"unknown preset {v!r}; choose from {sorted(PRESETS)}")
        return v

    @field_validator("shape")
    @classmethod
    def _shape(cls, v):
        if len(v) != 3 or min(v) < 1:
            raise ValueError("shape must be [H, W, C]")
        return v

    def to_counts(self) -> Counts:
        return Counts(**self.counts.model_dump())


class TriggerSection(_Section):
    dir: Optional[str] = None
    seed: int = 0


class ModelSection(_Section):
    layers: Optional[List[dict]] = None


class TrainSection(_Section):
    mode: Literal["bosc", "baseline"] = "bosc"
    seed: int = 0
    epochs: int = Field(15, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-4, gt=0)
    lr_step_epochs: int = Field(5, ge=1)
    lr_factor: float = Field(0.1, gt=0, le=1)
    alpha: float = Field(0.1, ge=0, le=1)
    gamma: float = Field(0.1, ge=0, le=1)
    beta: float = Field(0.15, ge=0, le=1)
    eta: float = Field(0.1, ge=0, le=1)
    lambda1: float = Field(0.1, ge=0)
    lambda2: float = Field(0.1, ge=0)
    mixup: bool = True
    flip_p: float = Field(0.5, ge=0, le=1)
    jpeg_p: float = Field(0.5, ge=0, le=1)
    jpeg_quality: List[int] = [70, 100]

    @model_validator(mode="after")
    def _fractions(self):
        if 2 * self.gamma + self.eta >= 1:
            raise ValueError("need 2*gamma + eta < 1")
        q = self.jpeg_quality
        if len(q) != 2 or not 1 <= q[0] <= q[1] <= 100:
            raise ValueError("jpeg_quality must be [low, high] within [1, 100]")
        return self

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            lr_step_epochs=self.lr_step_epochs, lr_factor=self.lr_factor,
            injection=InjectionConfig(self.alpha, self.gamma, self.beta, self.eta),
            loss=LossConfig(self.lambda1, self.lambda2),
            augment=AugmentConfig(self.flip_p, self.jpeg_p, tuple(self.jpeg_quality)),
            mixup=self.mixup, mode=self.mode, seed=self.seed,
        )


class InferenceSection(_Section):
    scores: List[str] = ["all"]
    primary: Optional[str] = None
    target_fpr: float = Field(0.05, ge=0, le=1)
    robustness: List[str] = []

    @field_validator("scores")
    @classmethod
    def _scores(cls, v):
        for s in v:
            ScoreKind.parse(s)
        return v

    @field_validator("primary")
    @classmethod
    def _primary(cls, v):
        if v is not None:
            ScoreKind(v)
        return v

    @field_validator("robustness")
    @classmethod
    def _ops(cls, v):
        for op in v:
            ProcessingOp.parse(op)
        return v

    def kinds(self):
        out = []
        for s in self.scores:
            for k in ScoreKind.parse(s):
                if k not in out:
                    out.append(k)
        return out


class ReportSection(_Section):
    output_dir: Optional[str] = None
    formats: List[Literal["csv", "json", "md"]] = ["csv", "json"]


class ExperimentConfig(_Section):
    name: Optional[str] = None
    dataset: DatasetSection = DatasetSection()
    triggers: TriggerSection = TriggerSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    inference: InferenceSection = InferenceSection()
    report: ReportSection = ReportSection()

    @property
    def label(self):
        return self.name or self.train.mode

    def primary_score(self) -> ScoreKind:
        if self.inference.primary:
            return ScoreKind(self.inference.primary)
        return ScoreKind.CLS_M if self.train.mode == "bosc" else ScoreKind.MLS

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config (or start from defaults) and apply nested overrides."""
    doc = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a mapping")
    doc = _merge(doc, overrides or {})
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
