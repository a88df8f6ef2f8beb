"""One plain-text configuration document drives every command.

Format: UTF-8, one ``section.key = value`` per line, ``#`` comments.
Each section maps onto one config dataclass; unknown sections or keys are
rejected, and values are coerced by the dataclass field types.  Seed
fields never live in the document: the CLI derives them from its single
``--seed`` flag.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, replace

from .court import CourtSpec
from .data import DataConfig, SynthConfig
from .errors import ConfigError
from .labels import SegmentationConfig
from .model import ArchitectureConfig
from .render import RenderSpec
from .rollout import RolloutConfig
from .train import TrainConfig


@dataclass(frozen=True)
class RunSettings:
    n_rollouts: int = 12
    threads: int = 1


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs/out"


@dataclass(frozen=True)
class RunConfig:
    court: CourtSpec = field(default_factory=CourtSpec)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    labels: SegmentationConfig = field(default_factory=SegmentationConfig)
    arch: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    render: RenderSpec = field(default_factory=RenderSpec)
    run: RunSettings = field(default_factory=RunSettings)
    paths: PathsConfig = field(default_factory=PathsConfig)


_SECTIONS: dict[str, type] = {
    "court": CourtSpec,
    "data": DataConfig,
    "synth": SynthConfig,
    "labels": SegmentationConfig,
    "arch": ArchitectureConfig,
    "train": TrainConfig,
    "rollout": RolloutConfig,
    "render": RenderSpec,
    "run": RunSettings,
    "paths": PathsConfig,
}

_HIDDEN_FIELDS = {"seed"}  # provided by --seed, never by the document


def _coerce(value: str, ftype, where: str):
    value = value.strip()
    try:
        if ftype is int:
            return int(value)
        if ftype is float:
            return float(value)
        if ftype is str:
            return value
        if ftype is bool:
            lowered = value.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if ftype == tuple[int, ...]:
            return tuple(int(v.strip()) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unsupported config field type {ftype}")


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def parse_document(text: str) -> dict[tuple[str, str], str]:
    """Raw (section, key) -> value strings, with duplicate keys rejected.

    Comment lines start with ``#``; values may contain ``#`` freely
    (hex colors), so there are no trailing comments.
    """
    entries: dict[tuple[str, str], str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key_part, _, value = line.partition("=")
        dotted = key_part.strip()
        if "." not in dotted:
            raise ConfigError(f"line {lineno}: key {dotted!r} must be section.key")
        section, _, key = dotted.partition(".")
        if (section, key) in entries:
            raise ConfigError(f"line {lineno}: duplicate key {dotted!r}")
        entries[(section, key)] = value.strip()
    return entries


def _apply(entries: dict[tuple[str, str], str], base: RunConfig) -> RunConfig:
    updates: dict[str, dict] = {}
    for (section, key), value in entries.items():
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown config section {section!r}")
        types = _field_types(cls)
        if key in _HIDDEN_FIELDS:
            raise ConfigError(f"{section}.{key}: seeds come from --seed, not the document")
        if key not in types:
            raise ConfigError(f"unknown config key {section}.{key}")
        updates.setdefault(section, {})[key] = _coerce(value, types[key], f"{section}.{key}")
    out = base
    for section, kv in updates.items():
        out = replace(out, **{section: replace(getattr(out, section), **kv)})
    return out


def load_run_config(
    text: str | None = None, overrides: list[str] | None = None
) -> RunConfig:
    """Build a RunConfig from a document plus ``section.key=value`` overrides."""
    cfg = RunConfig()
    if text is not None:
        cfg = _apply(parse_document(text), cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        cfg = _apply(parse_document(item), cfg)
    return cfg


def dump_run_config(cfg: RunConfig) -> str:
    """Full document with every key, suitable as a starting config file."""
    lines = []
    for section, cls in _SECTIONS.items():
        obj = getattr(cfg, section)
        for f in fields(cls):
            if f.name in _HIDDEN_FIELDS:
                continue
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)


def court_to_text(spec: CourtSpec) -> str:
    """The court section alone, the geometry interchange format."""
    lines = []
    for f in fields(CourtSpec):
        lines.append(f"court.{f.name} = {getattr(spec, f.name)}")
    return "\n".join(lines) + "\n"


def court_from_text(text: str) -> CourtSpec:
    entries = parse_document(text)
    for section, _ in entries:
        if section != "court":
            raise ConfigError(f"geometry document may only contain court.*, got {section!r}")
    return _apply(entries, RunConfig()).court
