"""Run configuration: a versioned JSON document, overridable key by key."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .preprocess import PreprocessConfig
from .timegan import ModelConfig, TrainSchedule

CONFIG_SCHEMA = "headgen.config/1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsConfig:
    bucket_width: float = 10.0
    max_lag: int = 10
    pca_samples: int = 1000
    absolute_velocity: bool = True


@dataclass(frozen=True)
class BaselineConfig:
    n_traces: int | None = None  # default: as many as the input
    out_len: int | None = None  # default: shortest input trace
    analysis_len: int | None = None  # default: largest power of two that fits
    energy_cutoff_hz: float = 5.0


@dataclass(frozen=True)
class RunConfig:
    traces: tuple[str, ...] = ()
    rate_hz: float = 250.0
    quantile_count: int = 1000
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    out: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["traces"] = list(self.traces)
        return {"schema": CONFIG_SCHEMA, **d}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @property
    def effective_schedule(self) -> TrainSchedule:
        return replace(self.schedule, seed=self.seed)


_SECTIONS = {"preprocess": PreprocessConfig, "model": ModelConfig, "schedule": TrainSchedule,
             "metrics": MetricsConfig, "baseline": BaselineConfig}


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where}: {e}") from None


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    schema = d.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r} (expected {CONFIG_SCHEMA!r})")
    kwargs: dict[str, Any] = {}
    for key, value in d.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key == "traces":
            kwargs[key] = tuple(str(v) for v in value)
        else:
            kwargs[key] = value
    return _build(RunConfig, kwargs, "config")


def load_config(path: str | Path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(d)


def override(cfg: RunConfig, updates: dict[str, Any]) -> RunConfig:
    """Apply dotted-key overrides such as ``{"schedule.epochs_joint": 0}``; ``None`` values are ignored."""
    d = cfg.to_dict()
    for key, value in updates.items():
        if value is None:
            continue
        *path, leaf = key.split(".")
        node = d
        for part in path:
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[leaf] = list(value) if isinstance(value, tuple) else value
    return from_dict(d)
