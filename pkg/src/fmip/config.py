"""Experiment configuration files.

INI-style text read with :mod:`configparser`.  Sections ``[model] [train]
[guidance] [nd] [ps] [pmvb] [apollo] [backend]``; keys are the field names of
the corresponding config classes.  Strategy sections also accept
``params = [..]`` in the bracketed order used by :func:`parse_params`.

Example::

    [train]
    epochs = 300
    batch_size = 0

    [guidance]
    tau = 0.1

    [nd]
    params = [50, 0.1]
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from fmip.downstream import (
    ApolloConfig,
    NDConfig,
    PMVBConfig,
    PSConfig,
    StrategyConfig,
    parse_params,
)
from fmip.guidance import GuidanceConfig
from fmip.model import ModelConfig
from fmip.train import TrainConfig


@dataclass
class SamplingConfig:
    steps: int = 30
    schedule: str = "cosine"
    candidates: int = 64
    seed: int = 0


@dataclass
class BackendConfig:
    name: str = "bnb"
    time_limit: float = 60.0
    gap_tol: float = 1e-6
    command: str = ""


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    strategies: StrategyConfig = field(default_factory=StrategyConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)


_SECTIONS = {
    "model": ("model", ModelConfig),
    "train": ("train", TrainConfig),
    "guidance": ("guidance", GuidanceConfig),
    "sampling": ("sampling", SamplingConfig),
    "backend": ("backend", BackendConfig),
}
_STRATEGIES = {"nd": NDConfig, "ps": PSConfig, "pmvb": PMVBConfig, "apollo": ApolloConfig}


def _coerce(cls, key: str, raw: str):
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    if key not in kinds:
        raise ValueError(f"[{cls.__name__}] unknown key {key!r}")
    kind = str(kinds[key])
    text = raw.strip()
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: not a boolean: {raw!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def _apply(obj, cls, items: dict):
    values = dataclasses.asdict(obj)
    for key, raw in items.items():
        values[key] = _coerce(cls, key, raw)
    return cls(**values)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    cfg = ExperimentConfig()
    for name in cp.sections():
        items = dict(cp.items(name))
        if name in _SECTIONS:
            attr, cls = _SECTIONS[name]
            setattr(cfg, attr, _apply(getattr(cfg, attr), cls, items))
        elif name in _STRATEGIES:
            cls = _STRATEGIES[name]
            current = getattr(cfg.strategies, name)
            if "params" in items:
                current = parse_params(name, items.pop("params"))
            setattr(cfg.strategies, name, _apply(current, cls, items))
        else:
            raise ValueError(f"unknown config section [{name}]")
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for name, (attr, _) in _SECTIONS.items():
        cp[name] = {k: str(v) for k, v in dataclasses.asdict(getattr(cfg, attr)).items()}
    for name in _STRATEGIES:
        cp[name] = {k: str(v) for k, v in dataclasses.asdict(getattr(cfg.strategies, name)).items()}
    lines = []
    for sec in cp.sections():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
        lines.append("")
    return "\n".join(lines)
