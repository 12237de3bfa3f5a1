"""Experiment configuration: one YAML file, one pydantic model per section.

Example::

    seed: 0
    dataset: {source: synthetic, num_classes: 3, seed: 7}
    model: {hidden: [64], init_gain: 3.0}
    train: {epochs: 30, learning_rate: 0.003}
    attacks:
      - {kind: pgd, epsilon: 0.0313725, steps: 20}
    medrdf:
      - {noise: salt_and_pepper, sigma: 0.1, denoiser: median_filter, n: 10000}
    sweep: {sigmas: [0.05, 0.1, 0.2, 0.3], copies: [100, 1000, 10000]}
    rm_threshold: 1.0
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..attacks import AttackKind, AttackSpec
from ..classifier import TrainConfig
from ..engine import MedRdfConfig
from ..errors import ConfigError, ParseError
from ..noise import Denoiser, DenoiserKind, NoiseKind, NoiseModel


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSection(_Section):
    source: Literal["synthetic", "idx", "csv", "image_dir"] = "synthetic"
    num_classes: Optional[int] = Field(default=3, ge=2)
    seed: int = 7
    sizes: Tuple[int, int, int] = (600, 100, 100)
    image_size: int = Field(default=28, ge=4)
    channels: Literal[1, 3] = 1
    # file-backed sources; ``train_*`` may be omitted when a checkpoint is given
    images: Optional[str] = None
    labels: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    path: Optional[str] = None
    train_path: Optional[str] = None
    test_limit: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _paths_present(self):
        if self.source == "idx" and not (self.images and self.labels):
            raise ValueError("idx source needs 'images' and 'labels'")
        if self.source in ("csv", "image_dir") and not self.path:
            raise ValueError(f"{self.source} source needs 'path'")
        return self


class ModelSection(_Section):
    conv_channels: List[int] = Field(default_factory=list)
    hidden: List[int] = Field(default_factory=lambda: [64])
    init_gain: float = Field(default=3.0, gt=0)
    checkpoint: Optional[str] = None


class TrainSection(_Section):
    epochs: int = Field(default=30, ge=1)
    learning_rate: float = Field(default=0.003, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-6, ge=0)
    lr_decay_epochs: List[int] = Field(default_factory=lambda: [15, 22])
    lr_decay_factor: float = Field(default=0.1, gt=0)
    batch_size: int = Field(default=10, ge=1)

    def to_domain(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.model_dump())


class AttackSection(_Section):
    kind: AttackKind
    epsilon: float = Field(default=8 / 255, ge=0)
    steps: Optional[int] = Field(default=None, ge=1)
    step_size: Optional[float] = Field(default=None, gt=0)
    random_start: bool = True
    kappa: float = Field(default=0.0, ge=0)
    spsa_batch: int = 128
    spsa_lr: float = Field(default=0.01, gt=0)
    spsa_delta: float = Field(default=0.01, gt=0)
    early_stop: Optional[bool] = None

    def to_domain(self, seed: int = 0) -> AttackSpec:
        return AttackSpec(seed=seed, **self.model_dump())


class MedRdfSection(_Section):
    noise: NoiseKind = NoiseKind.SALT_AND_PEPPER
    sigma: float = Field(default=0.1, ge=0)
    denoiser: DenoiserKind = DenoiserKind.MEDIAN_FILTER
    window: int = 3
    smoothing_sigma: float = Field(default=1.0, gt=0)
    n: int = Field(default=10_000, ge=1)
    alpha: float = Field(default=0.001, gt=0, lt=1)
    batch_size: int = Field(default=1000, ge=1)
    workers: int = Field(default=1, ge=1)

    @property
    def label(self) -> str:
        return f"{self.noise.value} sigma={self.sigma:g} n={self.n}"

    def to_domain(self, master_seed: int = 0) -> MedRdfConfig:
        return MedRdfConfig(
            n=self.n, alpha=self.alpha,
            noise=NoiseModel(self.noise, self.sigma),
            denoiser=Denoiser(self.denoiser, self.window, self.smoothing_sigma),
            batch_size=self.batch_size, master_seed=master_seed, workers=self.workers)


class SweepSection(_Section):
    sigmas: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.3])
    epsilons: List[float] = Field(default_factory=lambda: [0.0, 2 / 255, 8 / 255, 16 / 255])
    copies: List[int] = Field(default_factory=lambda: [100, 1000, 10_000])
    # copy count used by the sigma/epsilon sweep
    n: int = Field(default=1000, ge=1)

    @field_validator("sigmas", "epsilons", "copies")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("sweep lists must be non-empty")
        return v

    @field_validator("copies")
    @classmethod
    def _positive(cls, v):
        if min(v) < 1:
            raise ValueError("copy counts must be positive")
        return v


class ExperimentConfig(_Section):
    seed: int = Field(default=0, ge=0, lt=1 << 64)
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    attacks: List[AttackSection] = Field(
        default_factory=lambda: [AttackSection(kind=AttackKind.PGD)])
    medrdf: List[MedRdfSection] = Field(default_factory=lambda: [MedRdfSection()])
    sweep: SweepSection = Field(default_factory=SweepSection)
    rm_threshold: Optional[float] = Field(default=None, ge=0)
    out: str = "results"

    def threshold_for(self, num_classes: int) -> float:
        if self.rm_threshold is not None:
            return self.rm_threshold
        # 1 for three classes and 3 for seven; K/3 interpolates between them
        return 1.0 if num_classes <= 3 else 3.0 if num_classes == 7 else num_classes / 3

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None):
        update = {}
        if seed is not None:
            update["seed"] = seed
        if out is not None:
            update["out"] = str(out)
        return updated(self, **update)


def updated(section: BaseModel, **changes):
    """Validated copy of *section* with *changes* applied."""
    return type(section).model_validate({**section.model_dump(), **changes})


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        offset = len(text[:mark.index].encode()) if mark is not None else None
        raise ParseError(f"malformed YAML: {getattr(exc, 'problem', exc)}", path, offset) from exc
    return parse_config(raw or {}, source=path)


def parse_config(raw, source=None) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(raw)
        # build the domain objects once so their own invariants are checked too
        for a in cfg.attacks:
            a.to_domain()
        for m in cfg.medrdf:
            m.to_domain()
        cfg.train.to_domain(cfg.seed)
    except ValidationError as exc:
        where = f" in {source}" if source else ""
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid config{where}: {loc}: {first['msg']}") from exc
    return cfg
