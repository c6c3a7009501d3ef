"""Experiment configuration and its flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import ClassifierConfig
from .errors import ContractError
from .score_net import DiffusionConfig


class ConfigError(ContractError):
    pass


@dataclass
class SyntheticSpec:
    num_classes: int = 2
    graphs_per_domain: int = 200
    min_nodes: int = 12
    max_nodes: int = 24
    source_intra: float = 0.35
    source_inter: float = 0.05
    target_intra: float = 0.7
    target_inter: float = 0.2
    max_degree: int = 10
    seed: int = 0


@dataclass
class CurriculumConfig:
    alpha_start: float = 0.95
    alpha_end: float = 0.99


@dataclass
class AdaptConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 64
    rereconstruct: bool = False
    jigsaw: bool = True
    trace: bool = False


@dataclass
class ExperimentConfig:
    data: str = "synthetic"
    source_domain: int = 0
    target_domain: int = 1
    num_domains: int = 4
    train_ratio: float = 0.8
    seed: int = 0
    seeds: int = 5
    output_dir: str = "runs"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    @property
    def run_seeds(self) -> list:
        return [self.seed + i for i in range(self.seeds)]


def _leaves(obj, prefix=""):
    hints = typing.get_type_hints(type(obj))
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from _leaves(value, key + ".")
        else:
            yield key, hints[f.name], value


def flatten(cfg: ExperimentConfig) -> dict:
    return {k: v for k, _, v in _leaves(cfg)}


def _coerce(key: str, typ, raw: str):
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}") from exc


def set_value(cfg: ExperimentConfig, key: str, raw) -> None:
    """Assign a dotted ``key``; strings are coerced to the field's type."""
    types = {k: t for k, t, _ in _leaves(cfg)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    value = _coerce(key, types[key], raw) if isinstance(raw, str) else types[key](raw)
    target = cfg
    *parents, leaf = key.split(".")
    for p in parents:
        target = getattr(target, p)
    setattr(target, leaf, value)


def loads(text: str, base: ExperimentConfig = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = line.split("=", 1)
        set_value(cfg, key.strip(), raw)
    return cfg


def dumps(cfg: ExperimentConfig) -> str:
    lines = []
    for key, _, value in _leaves(cfg):
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg))
