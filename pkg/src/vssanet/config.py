"""Training configuration and the plain-text ``key = value`` config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Union

ORIENTATIONS = ("vertical", "horizontal", "none")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.0003
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 4
    base_size: int = 300
    scales: tuple = (0.75, 1.0, 1.25)
    alpha: float = 0.1
    capsule_p5: int = 3
    capsule_p10: int = 4
    width: float = 1.0
    orientation: str = "vertical"
    num_classes: int = 3
    iterations: int = 1000
    seed: int = 0
    hidden: int = 64
    anchor_min_scale: float = 0.2
    anchor_max_scale: float = 0.95
    neg_ratio: int = 3
    log_every: int = 50

    def validate(self) -> "TrainConfig":
        positive = ("learning_rate", "batch_size", "base_size", "capsule_p5", "capsule_p10", "width",
                    "num_classes", "iterations", "hidden", "anchor_min_scale", "anchor_max_scale", "neg_ratio")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("momentum", "weight_decay", "alpha", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError(f"scales must be a non-empty list of positive factors, got {self.scales!r}")
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"orientation must be one of {ORIENTATIONS}, got {self.orientation!r}")
        if self.anchor_max_scale < self.anchor_min_scale:
            raise ConfigError("anchor_max_scale must not be below anchor_min_scale")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(name: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(p) for p in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, extra_keys: dict[str, Any] | None = None,
                      source: str = "<config>") -> tuple[dict[str, Any], dict[str, Any]]:
    """Parse ``key = value`` lines into (train fields, extra fields).

    Blank lines and ``#`` comments are ignored; unknown keys are rejected.
    """
    defaults = TrainConfig().to_dict()
    extra_keys = extra_keys or {}
    train, extra = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        # command keys shadow same-named training keys (gen-data has its own seed)
        if key in extra_keys:
            extra[key] = _coerce(key, value, extra_keys[key])
        elif key in defaults:
            train[key] = _coerce(key, value, defaults[key])
        else:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
    return train, extra


def load_config(path: Union[str, Path], overrides: dict[str, Any] | None = None,
                extra_keys: dict[str, Any] | None = None) -> tuple[TrainConfig, dict[str, Any]]:
    train, extra = parse_config_text(Path(path).read_text(), extra_keys, str(path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in TrainConfig.__dataclass_fields__:
            train[key] = value
        else:
            extra[key] = value
    return TrainConfig(**train).validate(), extra


def dump_config(cfg: TrainConfig, extra: dict[str, Any] | None = None) -> str:
    lines = [f"{k} = {format_value(v)}" for k, v in cfg.to_dict().items()]
    lines += [f"{k} = {format_value(v)}" for k, v in (extra or {}).items()]
    return "\n".join(lines) + "\n"


def write_config(path: Union[str, Path], cfg: TrainConfig, extra: dict[str, Any] | None = None) -> None:
    Path(path).write_text(dump_config(cfg, extra))
