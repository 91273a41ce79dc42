"""Generator/discriminator pair plus the metadata that travels with it."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..indices import denormalize, to_uint8
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)


@dataclass
class ModelMetadata:
    site_id: str = ""
    roi_id: str = ""
    gcc_range: tuple[float, float] = (0.0, 1.0)
    epochs_trained: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gcc_range"] = list(self.gcc_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelMetadata":
        return cls(d["site_id"], d["roi_id"], tuple(d["gcc_range"]), int(d["epochs_trained"]))


@dataclass
class GanModel:
    generator: Generator
    discriminator: Discriminator
    metadata: ModelMetadata

    @property
    def gen_cfg(self) -> GeneratorConfig:
        return self.generator.cfg

    @property
    def disc_cfg(self) -> DiscriminatorConfig:
        return self.discriminator.cfg

    @property
    def image_size(self) -> tuple[int, int]:
        return self.gen_cfg.output_size

    def copy(self) -> "GanModel":
        return copy.deepcopy(self)

    @torch.no_grad()
    def synthesize(self, adjusted_gcc, mask, seed: int = 0, batch_size: int = 64) -> np.ndarray:
        """Generate one uint8 ``(H, W, 3)`` image per adjusted-GCC value.

        Noise is drawn from a generator seeded with ``seed``, so the output is
        a pure function of (parameters, conditions, mask, seed).
        """
        g = np.atleast_1d(np.asarray(adjusted_gcc, dtype=np.float64))
        gen = torch.Generator().manual_seed(seed)
        was_training = self.generator.training
        self.generator.eval()
        mask_t = torch.as_tensor(np.asarray(mask), dtype=torch.float32)
        out = []
        try:
            for i in range(0, len(g), batch_size):
                chunk = torch.as_tensor(g[i:i + batch_size], dtype=torch.float32)
                z = torch.randn(len(chunk), self.gen_cfg.noise_dim, generator=gen)
                x = self.generator(z, chunk, mask_t).permute(0, 2, 3, 1).double().numpy()
                out.append(to_uint8(denormalize(x)))
        finally:
            self.generator.train(was_training)
        return np.concatenate(out)


def build_gan(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, seed: int = 0,
              metadata: ModelMetadata | None = None) -> GanModel:
    if tuple(gen_cfg.output_size) != tuple(disc_cfg.input_size):
        raise ValueError(f"generator output {gen_cfg.output_size} != discriminator input {disc_cfg.input_size}")
    return GanModel(build_generator(gen_cfg, seed), build_discriminator(disc_cfg, seed + 1),
                    metadata or ModelMetadata())
