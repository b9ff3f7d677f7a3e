"""Flat ``key = value`` configuration files.

Every training hyperparameter is a key; values from the file override the
defaults and command-line flags override the file.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .train import TrainConfig

_SECTION = "settings"


@dataclass
class PipelineConfig:
    """Settings outside the optimizer: data slicing, model width, synthesis."""

    variant: str = "P-MTL"
    base_channels: int = 32
    segment_gap: float = 0.1
    min_words: int = 3
    test_song: str = ""
    gl_iters: int = 60
    gl_power: float = 1.2


def _coerce(value: str, kind, key: str):
    try:
        if kind is bool:
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def _field_types(cls):
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


def read_config(path) -> dict:
    """Parse a config file into a ``{key: typed value}`` dict (unknown keys rejected)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(f"[{_SECTION}]\n" + Path(path).read_text())
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {**_field_types(TrainConfig), **_field_types(PipelineConfig)}
    out = {}
    for key, raw in parser[_SECTION].items():
        key = key.replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r}")
        out[key] = _coerce(raw, known[key], key)
    return out


def build_configs(file_values: dict | None = None, overrides: dict | None = None):
    """Merge defaults, file values and non-None overrides into (TrainConfig, PipelineConfig)."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    train_keys = set(_field_types(TrainConfig))
    try:
        train = TrainConfig(**{k: v for k, v in merged.items() if k in train_keys})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    pipe = PipelineConfig(**{k: v for k, v in merged.items() if k not in train_keys})
    return train, pipe


def dump_config(train: TrainConfig, pipe: PipelineConfig) -> str:
    rows = {**dataclasses.asdict(pipe), **dataclasses.asdict(train)}
    return "".join(f"{k} = {v}\n" for k, v in rows.items())
