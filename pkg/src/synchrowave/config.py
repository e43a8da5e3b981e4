"""Strict JSON configuration: one document, unknown keys rejected, defaults materialized."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .experiment import SweepConfig
from .simulate import DisturbanceConfig, GroundTruthIbr, LineParams
from .training import TrainConfig
from .waveform import SamplingConfig

SEED_ENV = "SYNCHROWAVE_SEED"

_SECTIONS = {
    "sampling": SamplingConfig,
    "disturbance": DisturbanceConfig,
    "ibr": GroundTruthIbr,
    "line": LineParams,
    "train": TrainConfig,
}
# Sweep keys that are not themselves nested sections.
_SWEEP_KEYS = tuple(
    f.name for f in fields(SweepConfig) if f.name not in ("train", "disturbance", "ibr", "line")
)
_PATH_KEYS = ("dataset_path", "output_dir")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class CliConfig:
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    ibr: GroundTruthIbr = field(default_factory=GroundTruthIbr)
    line: LineParams = field(default_factory=LineParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    dataset_path: str = "dataset.json"
    output_dir: str = "results"
    # Keys given explicitly in the file, as "section.key".
    explicit: frozenset = field(default=frozenset(), compare=False, repr=False)

    def to_dict(self) -> dict:
        doc = {name: _plain(dataclasses.asdict(getattr(self, name))) for name in _SECTIONS}
        sweep = _plain(dataclasses.asdict(self.sweep))
        doc["sweep"] = {k: sweep[k] for k in _SWEEP_KEYS}
        doc["paths"] = {"dataset_path": self.dataset_path, "output_dir": self.output_dir}
        return doc


def _plain(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, section: str, data: Any):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{section}: expected an object")
    allowed = {f.name for f in fields(cls)}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key '{section}.{key}'")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_config(doc: Mapping) -> CliConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("configuration must be a JSON object")
    allowed = set(_SECTIONS) | {"sweep", "paths"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}'")
    explicit = set()
    parts = {}
    for name, cls in _SECTIONS.items():
        data = doc.get(name, {})
        parts[name] = _build(cls, name, data)
        explicit |= {f"{name}.{k}" for k in data}
    sweep_doc = doc.get("sweep", {})
    if not isinstance(sweep_doc, Mapping):
        raise ConfigError("sweep: expected an object")
    for key in sweep_doc:
        if key not in _SWEEP_KEYS:
            raise ConfigError(f"unknown key 'sweep.{key}'")
    explicit |= {f"sweep.{k}" for k in sweep_doc}
    try:
        sweep = SweepConfig(
            **sweep_doc,
            train=parts["train"],
            disturbance=parts["disturbance"],
            ibr=parts["ibr"],
            line=parts["line"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep: {exc}") from None
    paths = doc.get("paths", {})
    if not isinstance(paths, Mapping):
        raise ConfigError("paths: expected an object")
    for key in paths:
        if key not in _PATH_KEYS:
            raise ConfigError(f"unknown key 'paths.{key}'")
    explicit |= {f"paths.{k}" for k in paths}
    return CliConfig(
        sweep=sweep,
        dataset_path=str(paths.get("dataset_path", "dataset.json")),
        output_dir=str(paths.get("output_dir", "results")),
        explicit=frozenset(explicit),
        **parts,
    )


def load_config(path: str | Path | None) -> CliConfig:
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(doc)


def resolve_seed(flag: int | None, cfg: CliConfig, key: str, current: int) -> int:
    """Seed precedence: flag, then explicit config value, then $SYNCHROWAVE_SEED, then default."""
    if flag is not None:
        return flag
    if key in cfg.explicit:
        return current
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return current


def with_section(cfg: CliConfig, **changes) -> CliConfig:
    """Replace sections and keep the nested sweep config consistent."""
    cfg = replace(cfg, **changes)
    nested = {k: getattr(cfg, k) for k in ("train", "disturbance", "ibr", "line")}
    return replace(cfg, sweep=replace(cfg.sweep, **nested))
