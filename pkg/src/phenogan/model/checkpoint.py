"""Versioned checkpoint container for a :class:`GanModel`.

The file is a ``torch.save`` dict::

    {"format": "phenogan-checkpoint", "version": [major, minor],
     "generator_config": {...}, "discriminator_config": {...},
     "generator": state_dict, "discriminator": state_dict,
     "metadata": {...}, "training_state": {...} | None}

Readers accept any minor version of their major version; unknown keys are
ignored.
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import torch

from .gan import GanModel, ModelMetadata, build_gan
from .networks import DiscriminatorConfig, GeneratorConfig

FORMAT = "phenogan-checkpoint"
VERSION = (1, 0)


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str | Path, model: GanModel, training_state: dict | None = None) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT,
        "version": list(VERSION),
        "generator_config": model.gen_cfg.to_dict(),
        "discriminator_config": model.disc_cfg.to_dict(),
        "generator": model.generator.state_dict(),
        "discriminator": model.discriminator.state_dict(),
        "metadata": model.metadata.to_dict(),
        "training_state": training_state,
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: str | Path) -> tuple[GanModel, dict | None]:
    """Return ``(model, training_state)``."""
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a phenogan checkpoint")
    major = payload["version"][0]
    if major != VERSION[0]:
        raise CheckpointError(f"{path}: checkpoint major version {major} unsupported (reader is {VERSION[0]})")
    known_g = GeneratorConfig.__dataclass_fields__
    known_d = DiscriminatorConfig.__dataclass_fields__
    gen_cfg = GeneratorConfig(**{k: v for k, v in payload["generator_config"].items() if k in known_g})
    disc_cfg = DiscriminatorConfig(**{k: v for k, v in payload["discriminator_config"].items() if k in known_d})
    model = build_gan(gen_cfg, disc_cfg, metadata=ModelMetadata.from_dict(payload["metadata"]))
    model.generator.load_state_dict(payload["generator"])
    model.discriminator.load_state_dict(payload["discriminator"])
    return model, payload.get("training_state")
