"""Run configuration: INI preset files plus ``section.key=value`` overrides."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from datetime import date
from importlib import resources
from pathlib import Path

from .model.networks import DiscriminatorConfig, GeneratorConfig
from .training import TrainConfig

PRESETS = ("harvard", "bartlett", "toy")


@dataclass(frozen=True)
class DataConfig:
    cutoff_date: date = date(2021, 1, 1)
    window: str = "10:00-14:00"
    half: bool = True


@dataclass(frozen=True)
class FinetuneConfig:
    cross_site_fraction: float = 0.5
    cross_site_epochs: int = 100
    cross_site_lr_scale: float = 1.0
    cross_vegetation_fraction: float = 0.25
    cross_vegetation_epochs: int = 25
    cross_vegetation_lr_scale: float = 1.0


SECTIONS = {
    "generator": GeneratorConfig,
    "discriminator": DiscriminatorConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "finetune": FinetuneConfig,
}


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser()
        for name in SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
        return cp

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            self.to_parser().write(fh)
        return path


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    return str(v)


def _parse(text: str, annotation: str):
    text = text.strip()
    ann = str(annotation)
    if "tuple" in ann:
        return tuple(int(x) for x in text.split(","))
    if ann.startswith("bool"):
        if text.lower() in {"1", "true", "yes", "on"}:
            return True
        if text.lower() in {"0", "false", "no", "off"}:
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if ann.startswith("date"):
        return date.fromisoformat(text)
    if "None" in ann and text == "":
        return None
    if ann.startswith("int"):
        return int(text)
    if ann.startswith("float"):
        return float(text)
    return text


def _section(cls, items: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(items) - set(known)
    if unknown:
        raise ValueError(f"unknown keys for [{cls.__name__}]: {sorted(unknown)}")
    return {k: _parse(v, known[k].type) for k, v in items.items()}


def from_parser(cp: configparser.ConfigParser) -> RunConfig:
    extra = set(cp.sections()) - set(SECTIONS)
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")
    parts = {}
    for name, cls in SECTIONS.items():
        parts[name] = cls(**_section(cls, dict(cp[name]) if cp.has_section(name) else {}))
    return RunConfig(**parts)


def load_config(path: str | Path) -> RunConfig:
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    return from_parser(cp)


def load_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    cp = configparser.ConfigParser()
    cp.read_string(resources.files("phenogan.presets").joinpath(f"{name}.ini").read_text())
    return from_parser(cp)


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` strings on top of ``cfg``."""
    cp = cfg.to_parser()
    for item in overrides or ():
        try:
            lhs, value = item.split("=", 1)
            section, key = lhs.strip().split(".", 1)
        except ValueError as exc:
            raise ValueError(f"override {item!r} is not of the form section.key=value") from exc
        if section not in SECTIONS:
            raise ValueError(f"unknown section {section!r} in override {item!r}")
        cp[section][key.strip()] = value.strip()
    return from_parser(cp)


def with_train(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, **changes))
