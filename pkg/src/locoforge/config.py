"""Run configuration: one nested mapping validated into frozen dataclasses.

Every key is type-checked and range-checked before a run starts; unknown
keys are rejected with their dotted path.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .acppo import UpdateConfig
from .bc import BcConfig, ExpertConfig
from .curriculum import CurriculumConfig
from .sim.model import ModelSpec
from .task import TaskConfig


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    n_envs: int = 64
    horizon: int = 32
    iterations: int = 150
    checkpoint_every: int = 50
    output_dir: str = "runs/default"
    eval_episodes: int = 64
    eval_steps: int = 500
    eval_vx: Tuple[float, ...] = (0.5,)
    eval_ee_step: float = 0.002
    final_window: int = 10

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("run.seed must lie in [0, 2**64)")
        if not 1 <= self.n_envs <= 4096:
            raise ValueError("run.n_envs must lie in [1, 4096]")
        if not 1 <= self.horizon <= 10000:
            raise ValueError("run.horizon must lie in [1, 10000]")
        if not 0 <= self.iterations <= 100000:
            raise ValueError("run.iterations must lie in [0, 100000]")
        if self.checkpoint_every < 1:
            raise ValueError("run.checkpoint_every must be >= 1")
        if not self.output_dir:
            raise ValueError("run.output_dir must be non-empty")
        if self.eval_episodes < 1 or self.eval_steps < 1:
            raise ValueError("run.eval_episodes and run.eval_steps must be >= 1")
        if not self.eval_vx:
            raise ValueError("run.eval_vx must list at least one velocity")
        if not self.eval_ee_step >= 0:
            raise ValueError("run.eval_ee_step must be >= 0")
        if self.final_window < 1:
            raise ValueError("run.final_window must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    task: TaskConfig = field(default_factory=TaskConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    acppo: UpdateConfig = field(default_factory=UpdateConfig)
    bc: BcConfig = field(default_factory=BcConfig)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Apply dotted-key overrides, e.g. ``{"run.seed": 3}``, with validation."""
        d = self.to_dict()
        for key, val in overrides.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if not isinstance(node, dict) or p not in node:
                    raise ConfigError(f"{key}: unknown key")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"{key}: unknown key")
            node[parts[-1]] = val
        return config_from_dict(d)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(x) for x in obj]
    return obj


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if tp is float:
        if not _is_number(value):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        v = float(value)
        if v != v or v in (float("inf"), float("-inf")):
            raise ConfigError(f"{path}: must be finite")
        return v
    if tp is int:
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if origin in (tuple, Tuple):
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    raise ConfigError(f"{path}: unsupported field type {tp!r}")


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"{path}.{k}: unknown key" if path else f"{k}: unknown key")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            sub = f"{path}.{f.name}" if path else f.name
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        raise ConfigError(msg if "." in msg.split(" ")[0] else f"{path}: {msg}") from None


def config_from_dict(data: Optional[dict]) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
