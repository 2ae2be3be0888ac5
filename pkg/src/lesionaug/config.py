"""Pipeline configuration and the flat ``section.key=value`` config file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .adversary import GanConfig
from .data import derive_seed
from .segmenter import SegmenterConfig


@dataclass
class DataConfig:
    manifest: str = ""            # empty: generate a procedural corpus
    n_val: Optional[int] = None   # manifests only; None takes 10%
    train_n: int = 200
    train_hard_fraction: float = 0.25
    val_n: int = 50
    val_hard_fraction: float = 0.5


@dataclass
class EnsembleConfig:
    k: int = 5
    mode: str = "checkpoints"     # or "seeds": k independent retraining runs


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    resolution: int = 128
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    augmented: SegmenterConfig = field(default_factory=SegmenterConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    seed: int = 0
    out: str = "runs/default"

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)

    @property
    def size(self) -> tuple[int, int]:
        return (self.resolution, self.resolution)

    def validate(self) -> None:
        self.segmenter.validate(self.size)
        self.augmented.validate(self.size)
        self.gan.validate(self.size)
        if self.ensemble.k < 1:
            raise ValueError("ensemble.k must be >= 1")
        if self.ensemble.mode not in ("checkpoints", "seeds"):
            raise ValueError(f"unknown ensemble.mode {self.ensemble.mode!r}")
        if self.segmenter.architecture() != self.augmented.architecture():
            raise ValueError("baseline and augmented segmenters must share an architecture")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: str, current: Any, key: str):
    if isinstance(current, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if current is None:
        if value.lower() in ("", "none"):
            return None
        try:
            return int(value)
        except ValueError:
            return float(value)
    return value


def set_option(config: PipelineConfig, key: str, value: str) -> None:
    """Assign a dotted key such as ``gan.noise.mode``.

    ``segmenter.*`` keys are mirrored into ``augmented.*`` unless the latter
    was set explicitly (see :func:`parse_config`).
    """
    parts = key.split(".")
    target = config
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(target) or not hasattr(target, part):
            raise KeyError(f"unknown config section in {key!r}")
        target = getattr(target, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(target) or leaf not in {f.name for f in dataclasses.fields(target)}:
        raise KeyError(f"unknown config key {key!r}")
    current = getattr(target, leaf)
    if dataclasses.is_dataclass(current):
        raise KeyError(f"{key!r} names a section, not a value")
    setattr(target, leaf, _coerce(value.strip(), current, key))


def parse_config(text: str, config: Optional[PipelineConfig] = None,
                 overrides: Optional[dict[str, str]] = None) -> PipelineConfig:
    config = config or PipelineConfig()
    entries: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        entries.append((k.strip(), v.strip()))
    entries += list((overrides or {}).items())
    # segmenter.* first, mirrored to augmented.*, then everything else
    for k, v in entries:
        if k.startswith("segmenter."):
            set_option(config, k, v)
            set_option(config, "augmented." + k[len("segmenter."):], v)
    for k, v in entries:
        if not k.startswith("segmenter."):
            set_option(config, k, v)
    return config


def load_config(path: Optional[os.PathLike] = None, overrides: Optional[dict[str, str]] = None) -> PipelineConfig:
    text = ""
    if path:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_config(text, overrides=overrides)


def dump_config(config: PipelineConfig) -> str:
    lines = []

    def walk(obj, prefix):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                walk(value, f"{prefix}{f.name}.")
            else:
                lines.append(f"{prefix}{f.name}={'none' if value is None else value}")

    walk(config, "")
    return "\n".join(lines) + "\n"
