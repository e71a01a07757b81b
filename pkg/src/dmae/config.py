"""Experiment configuration: nested dataclasses, JSON files and dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from dmae.kfid import KfidConfig
from dmae.model.losses import LossConfig
from dmae.model.mae import EncoderConfig
from dmae.model.temporal import TemporalConfig
from dmae.synthdata import SynthConfig


class ConfigError(ValueError):
    """Unknown key or badly typed value in a config file or override."""


@dataclass
class MaskingConfig:
    policy: str = "motion_blur"
    ratio: float = 0.75
    omega: tuple = (0.0, 90.0)
    scale: tuple = (0.5, 2.0)
    k_size: int = 5
    sigma: tuple = (0.5, 1.5)
    per_patch: bool = False


@dataclass
class OptimConfig:
    lr: float = 3e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_interval: int = 2000
    decay_until: int = 6000
    decay_factor: float = 0.5


@dataclass
class PretrainConfig:
    steps: int = 300
    batch_size: int = 16
    log_every: int = 10
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(lr=1e-3))


@dataclass
class FinetuneConfig:
    steps: int = 300
    batch_size: int = 8
    frames: int = 4
    fusion_prob: float = 0.3
    fusion_n: int = 2
    fusion_mode: str = "mean"
    freeze_encoder: bool = False
    log_every: int = 10
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(lr=1e-3))


@dataclass
class DataConfig:
    numbers: tuple = (3, 7, 10, 17, 23, 32, 45, 58, 71, 99)
    train_tracklets: int = 200
    test_tracklets: int = 100
    train_seed: int = 11
    test_seed: int = 12


@dataclass
class CompareConfig:
    # fine-tuning protocols for compare-masking; the first one decides all_beat_baseline
    protocols: tuple = ("frozen", "full")

    def __post_init__(self):
        bad = [p for p in self.protocols if p not in ("frozen", "full")]
        if bad or not self.protocols:
            raise ValueError(f"protocols must be a non-empty subset of frozen/full, got {list(self.protocols)}")


@dataclass
class Config:
    seed: int = 0
    model: EncoderConfig = field(default_factory=EncoderConfig)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    kfid: KfidConfig = field(default_factory=KfidConfig)
    data: DataConfig = field(default_factory=DataConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)


def to_dict(cfg) -> dict:
    return _plain(dataclasses.asdict(cfg))


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _coerce(value, hint, key: str):
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected an object")
        return from_dict(hint, value, key + ".")
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return None if value is None else _coerce(value, args[0], key)
    if hint is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list")
        return tuple(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if hint is str and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string")
    return value


def from_dict(cls, data: dict, prefix: str = ""):
    """Build ``cls`` from a (possibly partial) nested dict; missing keys keep defaults."""
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {k: _coerce(v, hints[k], prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply ``a.b.c=value`` strings to a nested dict (values parsed as JSON when possible)."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {part} is not a section")
        node[parts[-1]] = _parse_value(raw.strip())
    return data


def load_config(path: Optional[Path] = None, overrides: Sequence[str] = (), seed: Optional[int] = None) -> Config:
    data = to_dict(Config())
    if path is not None:
        file_data = json.loads(Path(path).read_text())
        data = _merge(data, file_data)
    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = int(seed)
    return from_dict(Config, data)


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def dumps(cfg) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def config_hash(cfg) -> str:
    canon = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
