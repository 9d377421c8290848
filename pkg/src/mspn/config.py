"""Run configuration: nested dataclasses loaded from YAML with dotted overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .network import NetworkConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    # "moving_digits" generates clips in-process; "npz" loads saved datasets;
    # "directory" ingests frame folders.
    kind: str = "moving_digits"
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    train_count: int = 2000
    test_count: int = 200
    canvas: int = 64
    digits: int = 2
    glyph_size: Optional[int] = None
    speed_min: float = 2.0
    speed_max: float = 4.0
    size: Optional[list] = None
    stride: int = 10
    channels: int = 3
    seed: int = 0


@dataclass
class TrainConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    context: int = 10
    horizon: int = 10
    epochs: int = 1
    max_steps: Optional[int] = None
    batch_size: int = 8
    lr_g: float = 1e-3
    lr_d: float = 1e-8
    lambda_adv: float = 100.0
    adversarial: bool = True
    disc_base_channels: int = 16
    disc_stages: int = 4
    guard: int = 200
    score_ema: float = 0.9
    long_term: bool = False
    long_term_start: float = 0.5
    eval_every: int = 0
    eval_at_start: bool = False
    eval_count: Optional[int] = None
    eval_batch_size: int = 32
    checkpoint_every: int = 0
    seed: int = 0
    dtype: str = "float32"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self):
        if self.context < 1 or self.horizon < 0:
            raise ConfigError("context must be >= 1 and horizon >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.data.kind not in ("moving_digits", "npz", "directory"):
            raise ConfigError(f"unknown data.kind {self.data.kind!r}")
        if self.data.kind in ("npz", "directory") and not self.data.train_path:
            raise ConfigError(f"data.train_path is required for data.kind={self.data.kind!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if not 0 <= self.long_term_start <= 1:
            raise ConfigError("long_term_start must be in [0, 1]")
        return self


def _build(cls, values: dict):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {values!r}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in {cls.__name__}")
        sub = {"data": DataConfig, "network": NetworkConfig}.get(key) if cls is TrainConfig else None
        kwargs[key] = _build(sub, value) if sub else _coerce(key, hints[key], value)
    return cls(**kwargs)


def _coerce(key, hint, value):
    # YAML 1.1 reads exponent literals without a dot (1e-3) as strings.
    if value is None:
        return value
    base = [a for a in typing.get_args(hint) if a is not type(None)] or [hint]
    target = base[0]
    try:
        if target is float and isinstance(value, (str, int)) and not isinstance(value, bool):
            return float(value)
        if target is int and isinstance(value, str):
            return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {target.__name__}, got {value!r}") from None
    return value


def from_dict(values: dict) -> TrainConfig:
    return _build(TrainConfig, values or {}).validate()


def apply_overrides(values: dict, overrides) -> dict:
    """Apply ``a.b=value`` strings; values are parsed as YAML scalars."""
    values = json.loads(json.dumps(values or {}))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        node = values
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return values


def load_config(path=None, overrides=()) -> TrainConfig:
    values = {}
    if path is not None:
        with open(path) as fh:
            values = yaml.safe_load(fh) or {}
    return from_dict(apply_overrides(values, overrides))


def save_config(config: TrainConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
