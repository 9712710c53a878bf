"""Typed run configuration and its TOML file format.

A run file has the sections ``[backbone]``, ``[model]``, ``[discriminator]``,
``[data]``, ``[loss_weights]`` and ``[train]``; each key maps onto a field
of the matching dataclass and unknown keys are rejected. :func:`dumps` writes
the canonical form (sections and keys in declaration order, absent optional
values omitted), so ``dumps(loads(text)) == text`` for canonical files.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Tuple

import tomli

from .adversarial import DiscriminatorConfig
from .backbone import BackboneConfig
from .data.preprocess import MAPILLARY_V12_DRIVABLE_IDS, SOURCE_SIZE
from .errors import ConfigError
from .heads import DEFAULT_TARGET_SIZE
from .losses import LossWeights

MODES = ("st", "tl", "mtl")
MODE_ALIASES = {"single_task": "st", "transfer_learning": "tl", "multi_task": "mtl"}


def normalize_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ConfigError(f"unknown training mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass
class ModelSection:
    width: int = 64
    compact_steer_width: int = 16


@dataclass
class DataConfig:
    root: str = ""
    source_manifest: str = "source/train.tsv"
    target_manifest: str = "target/train.tsv"
    val_manifest: str = "target/val.tsv"
    source_size: Tuple[int, int] = SOURCE_SIZE
    target_size: Tuple[int, int] = DEFAULT_TARGET_SIZE
    scale_jitter: Tuple[float, float] = (0.8, 1.2)
    flip_p: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    max_blur_sigma: float = 1.0
    drivable_ids: List[int] = field(default_factory=lambda: list(MAPILLARY_V12_DRIVABLE_IDS))
    workers: int = 0

    def __post_init__(self):
        self.source_size = tuple(int(v) for v in self.source_size)
        self.target_size = tuple(int(v) for v in self.target_size)
        self.scale_jitter = tuple(float(v) for v in self.scale_jitter)
        self.drivable_ids = [int(v) for v in self.drivable_ids]


@dataclass
class TrainConfig:
    total_steps: int = 100000
    source_batch: int = 16
    target_batch: int = 32
    sgd_lr: float = 2.5e-4
    nesterov_momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_poly_power: float = 0.0
    val_every: int = 1000
    seed: int = 0
    deterministic: bool = True
    checkpoint_dir: str = "checkpoints"
    mode: str = "mtl"

    def __post_init__(self):
        if self.source_batch <= 0 or self.target_batch <= 0:
            raise ConfigError("batch sizes must be positive")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if self.val_every <= 0:
            raise ConfigError("val_every must be positive")
        if self.total_steps and self.total_steps % self.val_every:
            raise ConfigError(f"val_every ({self.val_every}) must divide total_steps ({self.total_steps})")
        self.mode = normalize_mode(self.mode)


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    model: ModelSection = field(default_factory=ModelSection)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    data: DataConfig = field(default_factory=DataConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self):
        from .mti import ModelConfig

        return ModelConfig(self.backbone, self.model.width, self.data.target_size, self.model.compact_steer_width)

    def to_dict(self) -> dict:
        return {f.name: _section_dict(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
        kwargs = {}
        for f in fields(cls):
            section_cls = type(f.default_factory())
            kwargs[f.name] = _build_section(section_cls, data.get(f.name, {}), f.name)
        return cls(**kwargs)


def _section_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _build_section(section_cls, values: dict, name: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section [{name}] must be a table")
    known = {f.name for f in fields(section_cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return section_cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad value in [{name}]: {exc}") from exc


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ConfigError(f"non-finite value {v} cannot be written")
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialise {type(v).__name__} value {v!r}")


def dumps(config: RunConfig) -> str:
    chunks = []
    for section, values in config.to_dict().items():
        lines = [f"[{section}]"]
        for key, v in values.items():
            if v is None:
                continue
            lines.append(f"{key} = {_toml_value(v)}")
        chunks.append("\n".join(lines) + "\n")
    return "\n".join(chunks)


def loads(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config file: {exc}") from exc
    return RunConfig.from_dict(data)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text())


def save(config: RunConfig, path) -> None:
    Path(path).write_text(dumps(config))


def desk_config(**train_overrides) -> RunConfig:
    """Small configuration that trains in minutes on one CPU core."""
    cfg = RunConfig(
        backbone=BackboneConfig(channels=[16, 16, 24, 32]),
        model=ModelSection(width=16, compact_steer_width=8),
        discriminator=DiscriminatorConfig(base_channels=8),
        data=DataConfig(source_size=(64, 96), target_size=(64, 128), scale_jitter=(1.0, 1.2)),
        # memory regularisation starts after the same 15% of training as in the full schedule
        loss_weights=LossWeights(mr_start_step=300),
        train=TrainConfig(total_steps=2000, source_batch=4, target_batch=8, sgd_lr=0.01, val_every=500),
    )
    for k, v in train_overrides.items():
        if not hasattr(cfg.train, k):
            raise ConfigError(f"unknown train key {k!r}")
        setattr(cfg.train, k, v)
    cfg.train.__post_init__()
    return cfg
