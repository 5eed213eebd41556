"""Loading and validation of train-agent configuration files."""

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from config import Config
from constants import (
    DEFAULT_CLIP_EPSILON,
    DEFAULT_EPOCHS,
    DEFAULT_GROUP_SIZE,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_DREAM,
    DEFAULT_MAX_STEPS,
    DEFAULT_RHO_EXPERT,
    DEFAULT_TEMPERATURE,
    DEFAULT_TOP_P,
    FEATURE_DIM,
)
from utils.errors import DreamdeskError

TRAIN_MODES = ("imagined", "real", "mixed")


class ConfigError(DreamdeskError):
    def __init__(self, key_path: str, message: str) -> None:
        super().__init__(f"{key_path}: {message}", key_path=key_path)
        self.key_path = key_path


@dataclass(frozen=True)
class TrainConfig:
    tasks_path: str
    seed: int = 0
    epochs: int = DEFAULT_EPOCHS
    group_size: int = DEFAULT_GROUP_SIZE
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_steps: int = DEFAULT_MAX_STEPS
    max_dream: int = DEFAULT_MAX_DREAM
    rho_expert: float = DEFAULT_RHO_EXPERT
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    learning_rate: float = DEFAULT_LEARNING_RATE
    momentum: float = 0.0
    old_refresh_interval: int = 1
    exact_expert_count: bool = False
    mode: str = "imagined"
    wm_path: str | None = None
    out_dir: str = Config.DEFAULT_OUT_DIR
    hallucination_rate: float | None = None
    eval_fraction: float = 0.25
    checkpoint_every: int = 50
    max_updates: int | None = None
    warmstart_steps: int = 0
    warmstart_lr: float = 0.1
    workers: int = 1
    record_wallclock: bool = False
    feature_dim: int = FEATURE_DIM

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """Stable hash of every setting except where results are written."""
        payload = {key: value for key, value in self.to_json().items() if key != "out_dir"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


_TYPES: dict[str, tuple[type, ...]] = {
    "int": (int,),
    "float": (int, float),
    "bool": (bool,),
    "str": (str,),
}


def _expected_kind(annotation: Any) -> tuple[str, bool]:
    args = typing.get_args(annotation) or (annotation,)
    optional = type(None) in args
    base = next(arg for arg in args if arg is not type(None))
    return base.__name__, optional


def _check_type(key: str, value: Any, annotation: Any) -> None:
    kind, optional = _expected_kind(annotation)
    if value is None:
        if not optional:
            raise ConfigError(key, "must not be null")
        return
    if kind != "bool" and isinstance(value, bool):
        raise ConfigError(key, f"expected {kind}, got bool")
    if not isinstance(value, _TYPES[kind]):
        raise ConfigError(key, f"expected {kind}, got {type(value).__name__}")


def _coerce(value: Any, annotation: Any) -> Any:
    if value is not None and _expected_kind(annotation)[0] == "float":
        return float(value)
    return value


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(key, message)


@dataclass(frozen=True)
class ConfigManager:
    """Validate train-agent configuration files."""

    def validate(self, data: Any) -> TrainConfig:
        _require(isinstance(data, dict), "$", "config must be a JSON object")
        known = {field.name: field for field in fields(TrainConfig)}
        for key in data:
            _require(key in known, key, "unknown key")
        _require("tasks_path" in data, "tasks_path", "is required")
        for key, value in data.items():
            _check_type(key, value, known[key].type)

        values = {key: _coerce(value, known[key].type) for key, value in data.items()}
        config = TrainConfig(**values)
        _require(config.mode in TRAIN_MODES, "mode", f"must be one of {', '.join(TRAIN_MODES)}")
        _require(config.mode == "real" or bool(config.wm_path), "wm_path", f"is required when mode is {config.mode!r}")
        _require(config.epochs >= 1, "epochs", "must be at least 1")
        _require(config.group_size >= 2, "group_size", "must be at least 2")
        _require(config.temperature >= 0, "temperature", "must not be negative")
        _require(0 < config.top_p <= 1, "top_p", "must lie in (0, 1]")
        _require(config.max_steps >= 1, "max_steps", "must be at least 1")
        _require(config.max_dream >= 1, "max_dream", "must be at least 1")
        _require(0 <= config.rho_expert <= 1, "rho_expert", "must lie in [0, 1]")
        _require(config.clip_epsilon > 0, "clip_epsilon", "must be positive")
        _require(config.learning_rate > 0, "learning_rate", "must be positive")
        _require(config.momentum >= 0, "momentum", "must not be negative")
        _require(config.old_refresh_interval >= 1, "old_refresh_interval", "must be at least 1")
        _require(
            config.hallucination_rate is None or 0 <= config.hallucination_rate <= 1,
            "hallucination_rate",
            "must lie in [0, 1]",
        )
        _require(0 <= config.eval_fraction < 1, "eval_fraction", "must lie in [0, 1)")
        _require(config.checkpoint_every >= 1, "checkpoint_every", "must be at least 1")
        _require(config.max_updates is None or config.max_updates >= 1, "max_updates", "must be at least 1")
        _require(config.warmstart_steps >= 0, "warmstart_steps", "must not be negative")
        _require(config.warmstart_lr > 0, "warmstart_lr", "must be positive")
        _require(config.workers >= 1, "workers", "must be at least 1")
        _require(config.feature_dim >= 1, "feature_dim", "must be at least 1")
        return config

    def load(self, path: str | Path) -> TrainConfig:
        source = Path(path)
        try:
            data = json.loads(source.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("$", f"cannot read {source}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"{source} is not valid JSON: {exc}") from exc
        return self.validate(data)
