"""Adversarial training: hinge losses, alternating updates and fine-tuning."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .data import TrainingSet
from .indices import adjust_gcc
from .model.checkpoint import save_checkpoint
from .model.gan import GanModel

logger = logging.getLogger(__name__)

LOSS_FIELDS = ("epoch", "step", "loss_d_real", "loss_d_fake", "loss_g")


class NumericAbort(RuntimeError):
    """A loss went non-finite; ``last_checkpoint`` points at the last good state (or None)."""

    def __init__(self, message: str, last_checkpoint: Path | None = None):
        super().__init__(message if last_checkpoint is None else f"{message} (last good checkpoint: {last_checkpoint})")
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    lr_d: float = 1e-4
    lr_g: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 16
    epochs: int = 1
    seed: int = 0
    gcc_sampling: str = "uniform"
    checkpoint_every: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr_d <= 0 or self.lr_g <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch norm)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.gcc_sampling != "uniform":
            raise ValueError(f"unsupported gcc_sampling {self.gcc_sampling!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    step: int
    loss_d_real: float
    loss_d_fake: float
    loss_g: float

    def as_row(self) -> list:
        return [self.epoch, self.step, repr(self.loss_d_real), repr(self.loss_d_fake), repr(self.loss_g)]


def _scores(x) -> torch.Tensor:
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))
    if t.numel() == 0:
        raise ValueError("score list is empty")
    return t.reshape(-1)


def hinge_loss_d(scores_real, scores_fake) -> tuple[torch.Tensor, torch.Tensor]:
    """``(mean(relu(1 - s_real)), mean(relu(1 + s_fake)))``."""
    real, fake = _scores(scores_real), _scores(scores_fake)
    return torch.relu(1.0 - real).mean(), torch.relu(1.0 + fake).mean()


def hinge_loss_g(scores_fake) -> torch.Tensor:
    return -_scores(scores_fake).mean()


@dataclass(frozen=True)
class ConditionInput:
    adjusted_gcc: np.ndarray
    mask: np.ndarray


def sample_condition(gcc_range: tuple[float, float], mask, rng: np.random.Generator, n: int = 1) -> ConditionInput:
    """Uniform GCC draws over ``gcc_range``, converted to adjusted GCC."""
    lo, hi = gcc_range
    if lo > hi:
        raise ValueError(f"invalid GCC range {gcc_range}")
    return ConditionInput(adjust_gcc(rng.uniform(lo, hi, size=n)), mask)


def _epoch_streams(seed: int, epoch: int) -> tuple[np.random.Generator, torch.Generator]:
    # streams depend only on (seed, epoch), which is what makes resume exact
    rng = np.random.default_rng([seed, epoch])
    tgen = torch.Generator().manual_seed(int(rng.integers(2**62)))
    return rng, tgen


def _batches(perm: np.ndarray, batch_size: int):
    n = len(perm)
    if n < batch_size:
        yield perm
        return
    for i in range(0, n - batch_size + 1, batch_size):
        yield perm[i:i + batch_size]


def make_optimizers(model: GanModel, cfg: TrainConfig):
    betas = (cfg.beta1, cfg.beta2)
    opt_d = torch.optim.Adam(model.discriminator.parameters(), lr=cfg.lr_d, betas=betas)
    opt_g = torch.optim.Adam(model.generator.parameters(), lr=cfg.lr_g, betas=betas)
    return opt_d, opt_g


class LossLog:
    """Appends loss records to a CSV file as they are produced."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        new = not self.path.exists()
        self._fh = open(self.path, "a", newline="")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(LOSS_FIELDS)

    def __call__(self, rec: LossRecord) -> None:
        self._writer.writerow(rec.as_row())

    def close(self) -> None:
        self._fh.close()


def read_loss_log(path: str | Path) -> list[LossRecord]:
    with open(path, newline="") as fh:
        return [LossRecord(int(r["epoch"]), int(r["step"]), float(r["loss_d_real"]),
                           float(r["loss_d_fake"]), float(r["loss_g"])) for r in csv.DictReader(fh)]


def train(model: GanModel, data: TrainingSet, cfg: TrainConfig, *, checkpoint_dir: str | Path | None = None,
          start_epoch: int = 0, optimizer_state: dict | None = None, on_record=None,
          on_epoch=None) -> tuple[GanModel, list[LossRecord]]:
    """Run epochs ``start_epoch .. cfg.epochs - 1`` of alternating D/G updates in place.

    The D step scores real images at their own adjusted GCC and fakes made at
    those same GCC values; the G step uses freshly sampled uniform conditions.
    Returns the model and the loss records of the epochs run here.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if tuple(data.images.shape[-2:]) != model.image_size:
        raise ValueError(f"training images {data.images.shape[-2:]} do not match model size {model.image_size}")
    G, D = model.generator, model.discriminator
    G.train()
    D.train()
    opt_d, opt_g = make_optimizers(model, cfg)
    if optimizer_state is not None:
        opt_d.load_state_dict(optimizer_state["opt_d"])
        opt_g.load_state_dict(optimizer_state["opt_g"])
    images = torch.from_numpy(data.images)
    gcc = torch.from_numpy(data.adjusted_gcc.astype(np.float32))
    mask = torch.from_numpy(data.mask.astype(np.float32))
    ckpt_dir = None if checkpoint_dir is None else Path(checkpoint_dir)
    last_ckpt = None
    records: list[LossRecord] = []
    step = 0

    for epoch in range(start_epoch, cfg.epochs):
        rng, tgen = _epoch_streams(cfg.seed, epoch)
        perm = rng.permutation(len(data))
        for step, idx in enumerate(_batches(perm, cfg.batch_size)):
            idx_t = torch.from_numpy(idx)
            real, g_real = images[idx_t], gcc[idx_t]
            b = len(idx)

            # discriminator step
            z = torch.randn(b, G.cfg.noise_dim, generator=tgen)
            with torch.no_grad():
                fake = G(z, g_real, mask)
            d_real, d_fake = hinge_loss_d(D(real, g_real, mask), D(fake, g_real, mask))
            opt_d.zero_grad(set_to_none=True)
            (d_real + d_fake).backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(D.parameters(), cfg.grad_clip)
            opt_d.step()

            # generator step, discriminator frozen
            cond = sample_condition(data.gcc_range, data.mask, rng, n=b)
            g_rand = torch.as_tensor(cond.adjusted_gcc, dtype=torch.float32)
            z = torch.randn(b, G.cfg.noise_dim, generator=tgen)
            D.requires_grad_(False)
            try:
                loss_g = hinge_loss_g(D(G(z, g_rand, mask), g_rand, mask))
                opt_g.zero_grad(set_to_none=True)
                loss_g.backward()
            finally:
                D.requires_grad_(True)
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(G.parameters(), cfg.grad_clip)
            opt_g.step()

            rec = LossRecord(epoch, step, d_real.item(), d_fake.item(), loss_g.item())
            if not all(math.isfinite(v) for v in (rec.loss_d_real, rec.loss_d_fake, rec.loss_g)):
                raise NumericAbort(f"non-finite loss at epoch {epoch} step {step}: {rec}", last_ckpt)
            records.append(rec)
            if on_record is not None:
                on_record(rec)

        model.metadata.epochs_trained += 1
        done = epoch + 1
        if ckpt_dir is not None and cfg.checkpoint_every and (done % cfg.checkpoint_every == 0 or done == cfg.epochs):
            state = {"epoch": done, "opt_d": opt_d.state_dict(), "opt_g": opt_g.state_dict(),
                     "train_config": cfg.to_dict()}
            last_ckpt = save_checkpoint(ckpt_dir / f"epoch_{done:04d}.pt", model, state)
        if on_epoch is not None:
            on_epoch(epoch, model)
        logger.info("epoch %d/%d done (%d steps)", done, cfg.epochs, step + 1)
    return model, records


def resume(checkpoint_path: str | Path, data: TrainingSet, cfg: TrainConfig, **kwargs):
    """Continue a run from a checkpoint written by :func:`train`."""
    from .model.checkpoint import load_checkpoint

    model, state = load_checkpoint(checkpoint_path)
    if not state:
        raise ValueError(f"{checkpoint_path} has no training state to resume from")
    return train(model, data, cfg, start_epoch=state["epoch"], optimizer_state=state, **kwargs)


def _finetune(base: GanModel, data: TrainingSet, fraction: float, epochs: int, cfg: TrainConfig,
              lr_scale: float = 1.0, **kwargs):
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if lr_scale <= 0:
        raise ValueError(f"lr_scale must be positive, got {lr_scale}")
    model = base.copy()
    rng = np.random.default_rng([cfg.seed, 104729])
    n = max(cfg.batch_size if len(data) >= cfg.batch_size else len(data), int(round(fraction * len(data))))
    idx = np.sort(rng.choice(len(data), size=min(n, len(data)), replace=False))
    model.metadata = replace(model.metadata, site_id=data.site_id, roi_id=data.roi_id, gcc_range=data.gcc_range)
    if epochs == 0:
        return model, []
    cfg = replace(cfg, epochs=epochs, lr_d=cfg.lr_d * lr_scale, lr_g=cfg.lr_g * lr_scale)
    return train(model, data.subset(idx), cfg, **kwargs)


def finetune_cross_site(base: GanModel, data: TrainingSet, cfg: TrainConfig, fraction: float = 0.5,
                        epochs: int = 100, lr_scale: float = 1.0, **kwargs):
    """Adapt a trained model to another site using a random ``fraction`` of its training data.

    ``lr_scale`` multiplies both learning rates of ``cfg``; a converged model restarted at full
    training rates with fresh Adam state tends to overshoot before it settles.
    """
    if data.site_id == base.metadata.site_id:
        raise ValueError(f"cross-site fine-tune needs a different site (both are {data.site_id!r})")
    return _finetune(base, data, fraction, epochs, cfg, lr_scale, **kwargs)


def finetune_cross_vegetation(base: GanModel, data: TrainingSet, cfg: TrainConfig, fraction: float = 0.25,
                              epochs: int = 25, lr_scale: float = 1.0, **kwargs):
    """Adapt a trained model to another ROI (vegetation type) of the same site."""
    if data.site_id != base.metadata.site_id:
        raise ValueError("cross-vegetation fine-tune expects the same site")
    if data.roi_id == base.metadata.roi_id:
        raise ValueError(f"cross-vegetation fine-tune needs a different ROI (both are {data.roi_id!r})")
    return _finetune(base, data, fraction, epochs, cfg, lr_scale, **kwargs)
