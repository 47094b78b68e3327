"""Experiment configuration: flat ``key = value`` text with sections.

Example::

    [game]
    name = grid_duel

    [ppo]
    batch_size = 250
    learning_rate = 0.02

    [protocol]
    k1 = 1500
    setting = reg_bc_rl

Every key has a default, and unknown sections or keys are rejected.
Optional values accept ``none``.
"""

from __future__ import annotations

import configparser
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .games import Game, make_game
from .opponent_model import AdaptConfig
from .ppo import PPOConfig
from .protocol import ProtocolConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GameConfig:
    """Game selection; ``None`` keeps the game's own default."""

    name: str = "grid_duel"
    size: Optional[int] = None
    horizon: Optional[int] = None
    discount: Optional[float] = None

    def build(self) -> Game:
        params = {f.name: getattr(self, f.name) for f in fields(self)
                  if f.name != "name" and getattr(self, f.name) is not None}
        try:
            return make_game(self.name, **params)
        except TypeError as e:
            raise ConfigError(f"bad parameters for game {self.name!r}: {e}") from None


@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "runs"
    checkpoint_interval: int = 0  # on-line iterations between checkpoints; 0 = final only


@dataclass(frozen=True)
class ExperimentConfig:
    game: GameConfig = field(default_factory=GameConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def sections(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)


SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _parse_value(raw: str, tp, where: str):
    raw = raw.strip()
    args = typing.get_args(tp)
    if args and type(None) in args:
        if raw.lower() == "none":
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tp.__name__}") from None


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def from_mapping(values: dict) -> ExperimentConfig:
    """Build a config from ``{section: {key: raw_string}}``."""
    sections = {}
    for sec, factory in SECTIONS.items():
        default = factory()
        hints = _hints(type(default))
        kw = {}
        for key, raw in values.get(sec, {}).items():
            if key not in hints:
                raise ConfigError(f"unknown key {sec}.{key}; valid keys: {sorted(hints)}")
            kw[key] = _parse_value(raw, hints[key], f"{sec}.{key}")
        try:
            sections[sec] = replace(default, **kw)
        except ValueError as e:
            raise ConfigError(f"[{sec}] {e}") from None
    unknown = set(values) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}; valid: {sorted(SECTIONS)}")
    cfg = ExperimentConfig(**sections)
    cfg.game.build()  # validate early
    return cfg


def parse_overrides(overrides) -> dict:
    out: dict = {}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        out.setdefault(sec, {})[key.strip()] = value
    return out


def loads(text: str, overrides=()) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    values = {sec: dict(parser[sec]) for sec in parser.sections()}
    version = values.pop("meta", {}).get("config_version")
    if version is not None and version.strip() != str(CONFIG_VERSION):
        raise ConfigError(f"config version {version} is not supported (expected {CONFIG_VERSION})")
    for sec, kv in parse_overrides(overrides).items():
        values.setdefault(sec, {}).update(kv)
    return from_mapping(values)


def load(path=None, overrides=()) -> ExperimentConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    return loads(text, overrides)


def dumps(cfg: ExperimentConfig) -> str:
    lines = ["[meta]", f"config_version = {CONFIG_VERSION}"]
    for sec, obj in cfg.sections():
        lines.append("")
        lines.append(f"[{sec}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def describe_keys() -> str:
    """One line per key with its default, for documentation."""
    out = []
    for sec, factory in SECTIONS.items():
        obj = factory()
        for f in fields(obj):
            out.append(f"{sec}.{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(out)
