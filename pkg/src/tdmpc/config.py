"""Flat key-value run configuration: one `key = value` per line, `#` comments,
keys namespaced by section (model.*, planner.*, buffer.*, train.*, env.*, and
the top-level seed). Unknown keys are a hard error, and defaults carry the
reference hyperparameter table verbatim so an empty file is a valid config.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .model import ModelConfig
from .planner import PlannerConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Bad key, bad value, or malformed config text."""


@dataclass(frozen=True)
class BufferConfig:
    capacity: int = 1_000_000
    sampling: str = "uniform"

    def validate(self):
        if self.capacity < 1:
            raise ConfigError("buffer.capacity must be positive")
        if self.sampling != "uniform":
            raise ConfigError(f"unsupported sampling {self.sampling!r} (only uniform)")
        return self


@dataclass(frozen=True)
class EnvConfig:
    task: str = "pendulum-swingup"


@dataclass(frozen=True)
class Config:
    model: ModelConfig = ModelConfig()
    planner: PlannerConfig = PlannerConfig()
    buffer: BufferConfig = BufferConfig()
    train: TrainConfig = TrainConfig()
    env: EnvConfig = EnvConfig()
    seed: int = 0


_SECTIONS = (("model", ModelConfig), ("planner", PlannerConfig),
             ("buffer", BufferConfig), ("train", TrainConfig), ("env", EnvConfig))


def _key_table():
    table = {}
    for section, dc in _SECTIONS:
        for f in fields(dc):
            table[f"{section}.{f.name}"] = (section, f.name, type(f.default))
    table["seed"] = (None, "seed", int)
    return table


CONFIG_KEYS = _key_table()


def _coerce(key, raw, typ):
    raw = raw.strip()
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {typ.__name__})") from None


def parse_config_text(text, source="<config>"):
    """Text -> {key: typed value}; rejects unknown keys and malformed lines."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        _, _, typ = CONFIG_KEYS[key]
        out[key] = _coerce(key, raw, typ)
    return out


def apply_overrides(config, overrides):
    """Return a new Config with {key: value} overrides applied."""
    by_section = {}
    top = {}
    for key, value in overrides.items():
        section, field, _ = CONFIG_KEYS[key]
        if section is None:
            top[field] = value
        else:
            by_section.setdefault(section, {})[field] = value
    kwargs = dict(top)
    for section, _ in _SECTIONS:
        current = getattr(config, section)
        if section in by_section:
            kwargs[section] = replace(current, **by_section[section])
    return replace(config, **kwargs)


def load_config(paths=(), sets=(), seed=None):
    """Defaults, then each file in order, then --set pairs, then the seed flag."""
    config = Config()
    for path in paths:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        config = apply_overrides(config, parse_config_text(text, source=path))
    pairs = {}
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        pairs[key] = _coerce(key, raw, CONFIG_KEYS[key][2])
    config = apply_overrides(config, pairs)
    if seed is not None:
        config = replace(config, seed=int(seed))
    config.planner.validate()
    config.train.validate()
    config.buffer.validate()
    return config


def serialize_config(config):
    """Canonical text form; parse(serialize(c)) reproduces c exactly."""
    lines = []
    for key, (section, field, typ) in CONFIG_KEYS.items():
        obj = config if section is None else getattr(config, section)
        value = getattr(obj, field)
        lines.append(f"{key} = {value!r}" if typ is float else f"{key} = {value}")
    return "\n".join(lines) + "\n"
