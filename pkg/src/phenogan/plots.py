"""Matplotlib figures for evaluation reports and dataset statistics."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _bars(ax, hist: dict, label: str, alpha: float = 0.6):
    edges = np.asarray(hist["edges"])
    ax.bar(edges[:-1], hist["counts"], width=np.diff(edges), align="edge", alpha=alpha, label=label)


def plot_ssim_histograms(aggregates: dict, path: str | Path) -> Path:
    h = aggregates["histograms"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2), sharey=True)
    _bars(axes[0], h["ssim"], "SSIM")
    _bars(axes[1], h["adjusted_ssim"], "adjusted SSIM")
    for ax, title in zip(axes, ("SSIM vs paired test image", "adjusted SSIM")):
        ax.set_title(title)
        ax.set_xlabel("score")
    axes[0].set_ylabel("synthetic images")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_index_distributions(aggregates: dict, path: str | Path) -> Path:
    h = aggregates["histograms"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for ax, idx in zip(axes, ("gcc", "rcc")):
        _bars(ax, h[f"test_{idx}"], "test")
        _bars(ax, h[f"fake_{idx}"], "synthetic", alpha=0.5)
        ax.set_xlabel(idx.upper())
        ax.legend()
    axes[0].set_ylabel("images")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_gcc_scatter(report, path: str | Path) -> Path:
    x, y = report.column("input_gcc"), report.column("fake_gcc")
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(x, y, s=6, alpha=0.6)
    lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.set_xlabel("conditioning GCC")
    ax.set_ylabel("GCC of synthetic image")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_benchmark(result, path: str | Path, title: str = "") -> Path:
    from .evaluation import SSIM_BINS

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(SSIM_BINS[:-1], result.counts, width=np.diff(SSIM_BINS), align="edge")
    ax.axvline(result.minimum, color="r", ls="--", lw=0.8)
    ax.set_xlabel("pairwise SSIM")
    ax.set_ylabel("image pairs")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_train_histogram(train_histogram: dict, path: str | Path) -> Path:
    keys = sorted(float(k) for k in train_histogram)
    counts = [train_histogram[k] if k in train_histogram else train_histogram[f"{k:.2f}"] for k in keys]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(keys, counts, width=0.01)
    ax.set_xlabel("adjusted GCC")
    ax.set_ylabel("training images")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
