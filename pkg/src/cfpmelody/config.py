"""Layered run configuration: defaults < JSON file < command-line flags."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .cfp import CfpConfig
from .dsp import StftConfig
from .models import QuantizerConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LabelConfig:
    format: str = "hz"
    hop_seconds: float = 0.02
    start_seconds: float = 0.0

    def __post_init__(self):
        if self.format not in ("hz", "midi_semitone"):
            raise ConfigError(f"labels.format must be 'hz' or 'midi_semitone', got {self.format!r}")
        if self.hop_seconds <= 0:
            raise ConfigError("labels.hop_seconds must be positive")


@dataclass(frozen=True)
class SpConfig:
    f_min: float = 73.416
    f_max: float = 1760.0
    voicing_threshold: float = 0.4


@dataclass(frozen=True)
class PatchConfig:
    tolerance_cents: float = 50.0
    nonvocal_rate: float = 0.1
    decision_threshold: float = 0.5


@dataclass(frozen=True)
class FrameModelConfig:
    channels: int = 4
    kernel_width: int = 3
    hidden: int = 128


@dataclass(frozen=True)
class StudentConfig:
    min_confidence: float = 0.0
    true_label_target: bool = False


@dataclass(frozen=True)
class EvalConfig:
    tolerance_cents: float = 50.0


@dataclass(frozen=True)
class RunConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    cfp: CfpConfig = field(default_factory=CfpConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    sp: SpConfig = field(default_factory=SpConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    frame_model: FrameModelConfig = field(default_factory=FrameModelConfig)
    student: StudentConfig = field(default_factory=StudentConfig)


def _build_section(cls, values: dict, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for k, v in values.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from None


def merge(base: RunConfig, overrides: dict) -> RunConfig:
    """Apply ``{section: {key: value}}`` on top of ``base``; unknown keys raise."""
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = set(overrides) - set(sections)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    updated = {}
    for name, values in overrides.items():
        current = dataclasses.asdict(getattr(base, name))
        if not isinstance(values, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        for k in values:
            if k not in current:
                raise ConfigError(f"unknown key in {name!r}: {k}")
        current.update(values)
        updated[name] = _build_section(type(getattr(base, name)), current, name)
    return dataclasses.replace(base, **updated)


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = merge(cfg, doc)
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
