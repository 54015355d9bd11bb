"""Run configuration: defaults, TOML files, and key=value overrides.

Config files are flat TOML; one level of sections is allowed and simply
flattened (sections exist for readability of experiment records, all keys
are global). CLI overrides arrive as repeated ``--set key=value`` flags
and are applied after the file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ImportError:  # py3.10
    import tomli as tomllib

from .model.hourglass import ModelConfig


@dataclass
class RunConfig:
    """Everything a training or evaluation run needs.

    The defaults reproduce the published setup: Adam with lr 0.0003 and
    weight decay 0.001, batch 8, 150 epochs, 4:1 train/val split, flips and
    CutMix enabled, full model (attention on, deformable upsampler).
    """

    data_dir: str = ""
    out_dir: str = "run"
    epochs: int = 150
    batch_size: int = 8
    learning_rate: float = 3e-4
    weight_decay: float = 1e-3
    seed: int = 0
    train_fraction: float = 0.8
    eval_every: int = 1
    gamma: float = 1.0
    target_f1: float = 0.0  # early-stop once val F1 reaches this; 0 disables
    resume: bool = False

    # target map response
    alpha: float = 0.02
    beta: float = 0.75
    c: float = 1.0

    # augmentation toggles
    hflip: bool = True
    vflip: bool = True
    cutmix: bool = True

    # architecture
    base_channels: int = 64
    hourglass_levels: int = 4
    stages: int = 2
    input_channels: int = 3
    attention: bool = True
    upsampler: str = "deformable"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            base_channels=self.base_channels,
            hourglass_levels=self.hourglass_levels,
            stages=self.stages,
            input_channels=self.input_channels,
            attention=self.attention,
            upsampler=self.upsampler,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    """Convert a raw TOML/string value to the field's declared type."""
    f = _FIELDS[name]
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if isinstance(value, str):
        text = value.strip()
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"cannot read {text!r} as a boolean for {name}")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    if kind == "bool":
        if isinstance(value, bool):
            return value
        raise ValueError(f"{name} expects a boolean, got {value!r}")
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{name} expects an integer, got {value!r}")
        return value
    if kind == "float":
        return float(value)
    return str(value)


def _flatten(raw: dict) -> dict:
    flat = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            for inner_key, inner_value in value.items():
                if isinstance(inner_value, dict):
                    raise ValueError(f"config nesting too deep at [{key}.{inner_key}]")
                flat[inner_key] = inner_value
        else:
            flat[key] = value
    return flat


def load_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus key=value overrides."""
    values = {}
    if path is not None:
        with open(Path(path), "rb") as fh:
            raw = tomllib.load(fh)
        for key, value in _flatten(raw).items():
            if key not in _FIELDS:
                raise ValueError(f"unknown config key {key!r} in {path}")
            values[key] = _coerce(key, value)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, _, text = item.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(key, text)
    return RunConfig(**values)
