"""Conditional generator and discriminator.

Both networks receive the ROI mask and the adjusted-GCC value as extra input
channels. The generator projects its noise vector onto a seed grid, appends
the (downsampled) mask and a constant GCC plane, then upsamples with
transposed convolutions. The discriminator stacks image, mask and GCC plane
and downsamples with strided convolutions down to a per-image score.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layers import SelfAttention, sn_layer


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    noise_dim: int = 128
    seed_grid: tuple[int, int] = (60, 81)
    upsample_stages: int = 3
    base_channels: int = 64
    attention_stage: int = 1
    output_size: tuple[int, int] = (480, 648)
    gcc_scale: float = 0.01
    gcc_offset: float = 0.0
    use_attention: bool = True
    use_mask: bool = True

    def __post_init__(self):
        object.__setattr__(self, "seed_grid", tuple(self.seed_grid))
        object.__setattr__(self, "output_size", tuple(self.output_size))
        h0, w0 = self.seed_grid
        k = 2 ** self.upsample_stages
        if self.upsample_stages < 1:
            raise ConfigError("generator needs at least one upsampling stage")
        if (h0 * k, w0 * k) != self.output_size:
            raise ConfigError(
                f"seed grid {self.seed_grid} x 2^{self.upsample_stages} != output size {self.output_size}")
        if not 0 <= self.attention_stage < self.upsample_stages:
            raise ConfigError("attention_stage must index an upsampling stage")
        if self.base_channels % 2 ** self.upsample_stages:
            raise ConfigError("base_channels must be divisible by 2^upsample_stages")
        if self.use_attention and self.attention_channels % 8:
            raise ConfigError("attention input channels must be divisible by 8")

    def stage_channels(self, i: int) -> tuple[int, int]:
        """(in, out) widths of upsampling stage ``i``; stage 0 also takes the condition planes."""
        cin = self.base_channels // 2 ** i
        if i == 0:
            cin += int(self.use_mask) + 1
        return cin, self.base_channels // 2 ** (i + 1)

    @property
    def attention_channels(self) -> int:
        return self.stage_channels(self.attention_stage)[0]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_size: tuple[int, int] = (480, 648)
    downsample_stages: int = 3
    base_channels: int = 64
    attention_stage: int = 1
    gcc_scale: float = 0.01
    gcc_offset: float = 0.0
    use_attention: bool = True
    use_mask: bool = True
    leak: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(self.input_size))
        h, w = self.input_size
        k = 2 ** self.downsample_stages
        if self.downsample_stages < 1:
            raise ConfigError("discriminator needs at least one downsampling stage")
        if h % k or w % k:
            raise ConfigError(f"input size {self.input_size} not divisible by 2^{self.downsample_stages}")
        if not 0 <= self.attention_stage < self.downsample_stages:
            raise ConfigError("attention_stage must index a downsampling stage")
        if self.use_attention and self.attention_channels % 8:
            raise ConfigError("attention input channels must be divisible by 8")

    @property
    def attention_channels(self) -> int:
        return self.stage_channels(self.attention_stage)[0]

    @property
    def in_channels(self) -> int:
        return 3 + int(self.use_mask) + 1

    def stage_channels(self, i: int) -> tuple[int, int]:
        cin = self.in_channels if i == 0 else self.base_channels * 2 ** (i - 1)
        return cin, self.base_channels * 2 ** i

    def to_dict(self) -> dict:
        return asdict(self)


def _batch_mask(mask, batch: int, size: tuple[int, int], dtype) -> torch.Tensor:
    """Coerce a mask given as (H, W), (1, 1, H, W) or (B, 1, H, W) into (B, 1, H, W)."""
    mask = torch.as_tensor(mask, dtype=dtype)
    if mask.dim() == 2:
        mask = mask[None, None]
    elif mask.dim() == 3:
        mask = mask[:, None]
    if tuple(mask.shape[-2:]) != tuple(size):
        raise ValueError(f"mask size {tuple(mask.shape[-2:])} does not match expected {tuple(size)}")
    return mask.expand(batch, 1, *size)


def _gcc_plane(adjusted_gcc, scale: float, offset: float, batch: int, size, dtype) -> torch.Tensor:
    g = torch.as_tensor(adjusted_gcc, dtype=dtype).reshape(-1)
    if g.numel() == 1:
        g = g.expand(batch)
    if g.numel() != batch:
        raise ValueError(f"{g.numel()} GCC values for a batch of {batch}")
    return (scale * (g - offset)).view(batch, 1, 1, 1).expand(batch, 1, *size)


def downsample_mask(mask: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Area-mean a (B, 1, H, W) mask down to ``size`` and re-binarize at 0.5."""
    return (F.adaptive_avg_pool2d(mask, size) >= 0.5).to(mask.dtype)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        h0, w0 = cfg.seed_grid
        self.project = sn_layer(nn.Linear(cfg.noise_dim, cfg.base_channels * h0 * w0))
        self.project_bn = nn.BatchNorm2d(cfg.base_channels)
        blocks = []
        for i in range(cfg.upsample_stages):
            cin, cout = cfg.stage_channels(i)
            blocks.append(nn.Sequential(
                sn_layer(nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1)),
                nn.BatchNorm2d(cout),
                nn.ReLU(),
            ))
        self.blocks = nn.ModuleList(blocks)
        if cfg.use_attention:
            self.attention = SelfAttention(cfg.attention_channels)
        self.to_rgb = sn_layer(nn.Conv2d(cfg.stage_channels(cfg.upsample_stages - 1)[1], 3, 3, padding=1))

    def forward(self, z: torch.Tensor, adjusted_gcc, mask=None) -> torch.Tensor:
        cfg = self.cfg
        b = z.shape[0]
        x = self.project(z).view(b, cfg.base_channels, *cfg.seed_grid)
        x = F.relu(self.project_bn(x))
        cond = []
        if cfg.use_mask:
            if mask is None:
                raise ValueError("this generator is conditioned on an ROI mask")
            m = _batch_mask(mask, b, cfg.output_size, x.dtype)
            cond.append(downsample_mask(m, cfg.seed_grid))
        cond.append(_gcc_plane(adjusted_gcc, cfg.gcc_scale, cfg.gcc_offset, b, cfg.seed_grid, x.dtype))
        x = torch.cat([x, *cond], dim=1)
        for i, block in enumerate(self.blocks):
            if cfg.use_attention and i == cfg.attention_stage:
                x = self.attention(x)
            x = block(x)
        return torch.tanh(self.to_rgb(x))


class Discriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(
            sn_layer(nn.Conv2d(*cfg.stage_channels(i), 4, stride=2, padding=1))
            for i in range(cfg.downsample_stages)
        )
        if cfg.use_attention:
            self.attention = SelfAttention(cfg.attention_channels)
        self.score = sn_layer(nn.Conv2d(cfg.stage_channels(cfg.downsample_stages - 1)[1], 1, 3, padding=1))

    def assemble_input(self, img: torch.Tensor, adjusted_gcc, mask=None) -> torch.Tensor:
        """Stack RGB, mask and GCC plane into the network input."""
        cfg = self.cfg
        if img.dim() != 4 or img.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(img.shape)}")
        if tuple(img.shape[-2:]) != cfg.input_size:
            raise ValueError(f"image size {tuple(img.shape[-2:])} != discriminator input {cfg.input_size}")
        b = img.shape[0]
        parts = [img]
        if cfg.use_mask:
            if mask is None:
                raise ValueError("this discriminator is conditioned on an ROI mask")
            parts.append(_batch_mask(mask, b, cfg.input_size, img.dtype))
        parts.append(_gcc_plane(adjusted_gcc, cfg.gcc_scale, cfg.gcc_offset, b, cfg.input_size, img.dtype))
        return torch.cat(parts, dim=1)

    def forward(self, img: torch.Tensor, adjusted_gcc, mask=None) -> torch.Tensor:
        x = self.assemble_input(img, adjusted_gcc, mask)
        for i, block in enumerate(self.blocks):
            if self.cfg.use_attention and i == self.cfg.attention_stage:
                x = self.attention(x)
            x = F.leaky_relu(block(x), self.cfg.leak)
        return self.score(x).mean(dim=(1, 2, 3))


def _seeded_build(cls, cfg, seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return cls(cfg)


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> Generator:
    return _seeded_build(Generator, cfg, seed)


def build_discriminator(cfg: DiscriminatorConfig, seed: int = 0) -> Discriminator:
    return _seeded_build(Discriminator, cfg, seed)
