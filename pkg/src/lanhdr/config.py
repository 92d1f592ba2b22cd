"""Run configuration: nested dataclasses loaded from YAML with ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError


@dataclass
class ModelConfig:
    exposures: int = 2
    gamma: float = 2.2
    kq_channels: int = 64
    value_channels: int = 64
    extractor_layers: int = 3
    hal_channels: int = 32
    feat_channels: int = 64
    lan_out_channels: int = 32
    merge_channels: int = 64
    fft_blocks: int = 5
    attention_tile: int = 1024

    @property
    def num_frames(self) -> int:
        return 5 if self.exposures == 2 else 7

    @property
    def half_window(self) -> int:
        return self.num_frames // 2

    def validate(self):
        if self.exposures not in (2, 3):
            raise ConfigError(f"model.exposures must be 2 or 3, got {self.exposures}")
        for name in ("kq_channels", "value_channels", "extractor_layers", "hal_channels",
                     "feat_channels", "lan_out_channels", "merge_channels", "attention_tile"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.fft_blocks < 0:
            raise ConfigError("model.fft_blocks must be >= 0")
        if not self.gamma > 0:
            raise ConfigError("model.gamma must be positive")


@dataclass
class LossConfig:
    lambda_1: float = 1.0
    lambda_per: float = 0.1
    lambda_freq: float = 0.1
    lambda_temp: float = 0.1
    epsilon: float = 1e-3
    mu: float = 5000.0
    vgg_weights: str | None = None
    vgg_layer: str = "relu4_4"

    def validate(self):
        for name in ("lambda_1", "lambda_per", "lambda_freq", "lambda_temp"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss.{name} must be >= 0")
        if not self.epsilon > 0:
            raise ConfigError("loss.epsilon must be positive")
        if not self.mu > 0:
            raise ConfigError("loss.mu must be positive")


@dataclass
class DataConfig:
    manifest: str | None = None
    stops: float = 2.0
    crop_size: int = 256
    augment: bool = True
    gain_jitter: tuple[float, float] = (0.8, 1.0)
    shot_noise: float = 0.0
    read_noise: float = 0.0

    def validate(self):
        if not self.stops > 0:
            raise ConfigError("data.stops must be positive")
        if self.crop_size < 4 or self.crop_size % 4:
            raise ConfigError("data.crop_size must be a positive multiple of 4")
        lo, hi = self.gain_jitter
        if not 0 < lo <= hi <= 1:
            raise ConfigError("data.gain_jitter must satisfy 0 < lo <= hi <= 1")
        if self.shot_noise < 0 or self.read_noise < 0:
            raise ConfigError("noise levels must be >= 0")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-2
    batch_size: int = 8
    max_steps: int = 100_000
    seed: int = 0
    deterministic: bool = True
    ckpt_dir: str = "checkpoints"
    ckpt_every: int = 1000
    log_path: str | None = None

    def validate(self):
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        if not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("train.betas must lie in [0, 1)")
        if self.batch_size < 1 or self.max_steps < 0 or self.ckpt_every < 1:
            raise ConfigError("train.batch_size/ckpt_every must be >= 1 and max_steps >= 0")


@dataclass
class InferConfig:
    tile: int | None = None
    tile_overlap: int = 32

    def validate(self):
        if self.tile is not None and (self.tile % 4 or self.tile <= 2 * self.tile_overlap):
            raise ConfigError("infer.tile must be a multiple of 4 larger than twice the overlap")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)

    def validate(self) -> "RunConfig":
        for section in (self.model, self.loss, self.data, self.train, self.infer):
            section.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any] | None) -> "RunConfig":
        return _build(cls, raw or {}, "").validate()


def model_hash(model: ModelConfig) -> str:
    """Stable digest of the architecture fields; checkpoints are only loadable into a matching model."""
    blob = json.dumps(dataclasses.asdict(model), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
    for item in overrides or []:
        apply_override(raw, item)
    return RunConfig.from_dict(raw)


def apply_override(raw: dict[str, Any], item: str) -> None:
    key, sep, value = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    node = raw
    *parents, leaf = key.split(".")
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {part} is not a section")
    node[leaf] = yaml.safe_load(value)


def _build(cls, raw: dict[str, Any], prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {prefix or '<root>'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    hints = typing.get_type_hints(cls)
    for name, value in raw.items():
        kind = hints[name]
        if dataclasses.is_dataclass(kind):
            kwargs[name] = _build(kind, value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, known[name], f"{prefix}{name}")
    return cls(**kwargs)


def _coerce(value, f: dataclasses.Field, key: str):
    default = f.default if f.default is not dataclasses.MISSING else None
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(f"{key} must be a list of {len(default)} numbers")
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if value is not None and f.type in ("str | None", "str") and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    if f.type == "int | None" and value is not None and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{key} must be an integer or null")
    return value
