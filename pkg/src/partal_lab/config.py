"""Experiment configuration: sectioned key=value files, strict parsing.

Every key has a default equal to the reference configuration, and unknown
sections or keys are rejected outright; a silently ignored typo is how
irreproducible results happen.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from .data import GeneratorConfig
from .model import NetConfig, TrainConfig


class ConfigError(ValueError):
    """Malformed, unknown, or ill-typed configuration input."""


@dataclass
class ALSection:
    initial_fully_labelled: int = 40
    iterations: int = 8
    budget_per_iteration: int = 36
    mc_passes: int = 20
    strategies: tuple[str, ...] = ("partal", "random")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass
class OutputSection:
    directory: str = "results"
    emit_plot_data: bool = False


@dataclass
class ExperimentConfig:
    dataset: GeneratorConfig = field(default_factory=GeneratorConfig)
    dataset_seed: int = 0
    dataset_path: str = "dataset"
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    al: ALSection = field(default_factory=ALSection)
    output: OutputSection = field(default_factory=OutputSection)


_DATASET_KEYS = {
    "height": ("dataset", "H", int),
    "width": ("dataset", "W", int),
    "num_bumps": ("dataset", "num_bumps", int),
    "noise_std": ("dataset", "noise_std", float),
    "num_classes": ("dataset", "num_classes", int),
    "num_train": ("dataset", "n_train", int),
    "num_test": ("dataset", "n_test", int),
    "seed": ("", "dataset_seed", int),
    "path": ("", "dataset_path", str),
}
_MODEL_KEYS = {
    "hidden_dim": ("net", "hidden_dim", int),
    "dropout_rate": ("net", "dropout_rate", float),
    "teacher_forcing_p": ("train", "teacher_forcing_p", float),
    "epochs": ("train", "epochs", int),
    "base_lr": ("train", "base_lr", float),
    "weight_decay": ("train", "weight_decay", float),
    "batch_size": ("train", "batch_size", int),
    "reinit_each_iteration": ("train", "reinit_each_iteration", bool),
}
_AL_KEYS = {
    "initial_fully_labelled": ("al", "initial_fully_labelled", int),
    "iterations": ("al", "iterations", int),
    "budget_per_iteration": ("al", "budget_per_iteration", int),
    "mc_passes": ("al", "mc_passes", int),
    "strategies": ("al", "strategies", "str_list"),
    "seeds": ("al", "seeds", "int_list"),
}
_OUTPUT_KEYS = {
    "directory": ("output", "directory", str),
    "emit_plot_data": ("output", "emit_plot_data", bool),
}
_SECTIONS = {
    "dataset": _DATASET_KEYS,
    "model": _MODEL_KEYS,
    "al": _AL_KEYS,
    "output": _OUTPUT_KEYS,
}


def _parse_value(raw: str, kind, section: str, key: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "str_list":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if kind == "int_list":
            return tuple(int(s.strip()) for s in raw.split(",") if s.strip())
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    cfg = ExperimentConfig()
    overrides: dict[str, dict[str, object]] = {"dataset": {}, "net": {}, "train": {}, "al": {},
                                               "output": {}, "": {}}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(
                f"unknown section [{section}]; valid: {', '.join(_SECTIONS)}")
        keys = _SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]; valid: {', '.join(keys)}")
            target, attr, kind = keys[key]
            overrides[target][attr] = _parse_value(raw, kind, section, key)

    def build(cls, current, values):
        if not values:
            return current
        merged = {f.name: getattr(current, f.name) for f in fields(cls)}
        merged.update(values)
        return cls(**merged)

    cfg.dataset = build(GeneratorConfig, cfg.dataset, overrides["dataset"])
    cfg.net = build(NetConfig, cfg.net, overrides["net"])
    cfg.train = build(TrainConfig, cfg.train, overrides["train"])
    cfg.al = build(ALSection, cfg.al, overrides["al"])
    cfg.output = build(OutputSection, cfg.output, overrides["output"])
    for attr, value in overrides[""].items():
        setattr(cfg, attr, value)

    for s in cfg.al.strategies:
        from .acquisition import STRATEGY_NAMES
        if s not in STRATEGY_NAMES:
            raise ConfigError(
                f"unknown strategy {s!r}; valid: {', '.join(STRATEGY_NAMES)}")
    try:
        cfg.dataset.validate()
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Render a config as text that parses back to an equal config."""
    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for key, (target, attr, _kind) in keys.items():
            holder = cfg if target == "" else getattr(cfg, target)
            out.write(f"{key} = {_format_value(getattr(holder, attr))}\n")
        out.write("\n")
    return out.getvalue()
