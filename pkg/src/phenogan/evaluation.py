"""Image-quality and index-fidelity measurements for synthesized imagery."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .indices import adjust_gcc, roi_indices

logger = logging.getLogger(__name__)

K1, K2 = 0.01, 0.03
LUMA = np.array([0.299, 0.587, 0.114])


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ LUMA
    raise ValueError(f"expected a grayscale or RGB image, got shape {img.shape}")


def _kernel(win_size: int, gaussian: bool, sigma: float) -> np.ndarray:
    if gaussian:
        x = np.arange(win_size) - (win_size - 1) / 2
        k = np.exp(-0.5 * (x / sigma) ** 2)
    else:
        k = np.ones(win_size)
    return k / k.sum()


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable correlation over fully-contained windows only."""
    x = sliding_window_view(x, len(k), axis=0) @ k
    return sliding_window_view(x, len(k), axis=1) @ k


def ssim(a: np.ndarray, b: np.ndarray, *, data_range: float = 255.0, win_size: int = 7,
         gaussian: bool = True, sigma: float = 1.5, use_sample_covariance: bool | None = None) -> float:
    """Mean structural similarity of two images.

    RGB inputs are compared on luma. Local statistics come from a
    ``win_size`` window (Gaussian with ``sigma`` by default, or uniform) and
    are averaged over every position where the window fits in the image.
    Sample-covariance correction defaults to on for the uniform window and
    off for the Gaussian one.
    """
    x, y = to_luma(a), to_luma(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < win_size or win_size % 2 == 0:
        raise ValueError(f"win_size {win_size} must be odd and fit inside {x.shape}")
    if use_sample_covariance is None:
        use_sample_covariance = not gaussian
    k = _kernel(win_size, gaussian, sigma)
    n = win_size * win_size
    cov_norm = n / (n - 1) if use_sample_covariance else 1.0
    ux, uy = _filter_valid(x, k), _filter_valid(y, k)
    uxx, uyy, uxy = _filter_valid(x * x, k), _filter_valid(y * y, k), _filter_valid(x * y, k)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux ** 2 + uy ** 2 + c1) * (vx + vy + c2))
    return float(s.mean())


def group_by_adjusted_gcc(gcc_values: Sequence[float], images: Sequence[np.ndarray]) -> dict[float, list]:
    """Bucket images by the adjusted GCC of their label."""
    groups: dict[float, list] = defaultdict(list)
    for g, img in zip(gcc_values, images):
        groups[adjust_gcc(g)].append(img)
    return dict(groups)


class MissingGccError(KeyError):
    pass


def adjusted_ssim(fake: np.ndarray, groups: Mapping[float, Sequence[np.ndarray]], adjusted: float, **kw) -> float:
    """Best SSIM of ``fake`` against every real image sharing its adjusted GCC."""
    if adjusted not in groups or not groups[adjusted]:
        keys = np.array(sorted(groups))
        nearest = keys[np.argsort(np.abs(keys - adjusted))[:3]] if len(keys) else []
        raise MissingGccError(f"no test image at adjusted GCC {adjusted:.2f}; nearest: {list(map(float, nearest))}")
    return max(ssim(fake, ref, **kw) for ref in groups[adjusted])


SSIM_BINS = np.round(np.linspace(-1.0, 1.0, 21), 10)


@dataclass
class BenchmarkResult:
    scores: np.ndarray
    minimum: float
    modal_bin: tuple[float, float]
    counts: np.ndarray


def same_gcc_benchmark(images: Sequence[np.ndarray], **kw) -> BenchmarkResult:
    """SSIM over every pair of real images that share one GCC value."""
    if len(images) < 2:
        raise ValueError("need at least two images for a pairwise benchmark")
    scores = np.array([ssim(a, b, **kw) for a, b in combinations(images, 2)])
    counts, _ = np.histogram(scores, bins=SSIM_BINS)
    k = int(np.argmax(counts))
    return BenchmarkResult(scores, float(scores.min()), (float(SSIM_BINS[k]), float(SSIM_BINS[k + 1])), counts)


def rmspe(predicted, actual, conventional: bool = False) -> float:
    """Root mean squared percentage error.

    Default mode is ``sqrt(sum(pct_err ** 2)) / N``; ``conventional=True``
    gives ``sqrt(mean(pct_err ** 2))``. The two agree only for N = 1.
    """
    p = np.asarray(predicted, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.size} predicted vs {a.size} actual")
    if p.size == 0:
        raise ValueError("rmspe of empty sequences")
    if np.any(a == 0):
        raise ZeroDivisionError("actual values must be non-zero")
    pct = (a - p) / a * 100.0
    if conventional:
        return float(np.sqrt(np.mean(pct ** 2)))
    return float(np.sqrt(np.sum(pct ** 2)) / p.size)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    return float((xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc)))


@dataclass
class EvalRow:
    filename: str
    input_gcc: float
    test_gcc: float
    test_rcc: float
    fake_gcc: float
    fake_rcc: float
    ssim: float
    adjusted_ssim: float
    out_of_range: bool


ROW_FIELDS = tuple(EvalRow.__dataclass_fields__)
INDEX_BINS = np.round(np.linspace(0.20, 0.60, 41), 10)


@dataclass
class EvalReport:
    rows: list[EvalRow]
    aggregates: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def save(self, out_dir: str | Path, stem: str = "eval") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows_path, agg_path = out_dir / f"{stem}_rows.csv", out_dir / f"{stem}_aggregates.json"
        with open(rows_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow(asdict(r))
        agg_path.write_text(json.dumps(self.aggregates, indent=1))
        return rows_path, agg_path


def _histogram(values, bins) -> dict:
    counts, edges = np.histogram(np.clip(values, bins[0], bins[-1]), bins=bins)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def evaluate_model(model, samples, mask: np.ndarray, test_images: np.ndarray, *, seed: int = 0,
                   gcc_range: tuple[float, float] | None = None, conventional: bool = False,
                   ssim_kwargs: dict | None = None) -> EvalReport:
    """Generate one fake per test sample at its adjusted GCC and score it.

    ``model`` needs a ``synthesize(adjusted_gcc, mask, seed)`` method returning
    ``(N, H, W, 3)`` images. Ground-truth indices are measured on
    ``test_images`` (already at model resolution) with the same ``mask`` used
    for the fakes, so a generator that reproduces the test images scores an
    RMSPE of exactly zero.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no test samples to evaluate")
    if len(test_images) != len(samples):
        raise ValueError("one test image per sample required")
    kw = ssim_kwargs or {}
    if gcc_range is None and hasattr(model, "metadata"):
        gcc_range = model.metadata.gcc_range
    adjusted = np.array([adjust_gcc(s.gcc) for s in samples])
    fakes = model.synthesize(adjusted, mask, seed=seed)
    groups = group_by_adjusted_gcc([s.gcc for s in samples], test_images)
    lo_adj, hi_adj = (adjust_gcc(gcc_range[0]), adjust_gcc(gcc_range[1])) if gcc_range else (-np.inf, np.inf)

    rows = []
    order = sorted(range(len(samples)), key=lambda i: samples[i].image_path.name)
    for i in order:
        s, fake, real = samples[i], fakes[i], test_images[i]
        tg, tr = roi_indices(real, mask)
        fg, fr = roi_indices(fake, mask)
        rows.append(EvalRow(
            filename=s.image_path.name,
            input_gcc=adjusted[i] / 100,
            test_gcc=tg,
            test_rcc=tr,
            fake_gcc=fg,
            fake_rcc=fr,
            ssim=ssim(fake, real, **kw),
            adjusted_ssim=adjusted_ssim(fake, groups, adjusted[i], **kw),
            out_of_range=not lo_adj <= adjusted[i] <= hi_adj,
        ))
    report = EvalReport(rows)
    report.aggregates = summarize(report, samples, conventional)
    return report


def summarize(report: EvalReport, samples, conventional: bool = False) -> dict:
    col = report.column
    labelled = [s for s in samples if s.rcc is not None]
    agg = {
        "n": len(report.rows),
        "rmspe_mode": "conventional" if conventional else "literal",
        "rmspe_gcc": rmspe(col("fake_gcc"), col("test_gcc"), conventional),
        "rmspe_rcc": rmspe(col("fake_rcc"), col("test_rcc"), conventional),
        "rmspe_gcc_literal": rmspe(col("fake_gcc"), col("test_gcc")),
        "rmspe_gcc_conventional": rmspe(col("fake_gcc"), col("test_gcc"), True),
        "rmspe_rcc_literal": rmspe(col("fake_rcc"), col("test_rcc")),
        "rmspe_rcc_conventional": rmspe(col("fake_rcc"), col("test_rcc"), True),
        "rmspe_gcc_vs_input_conventional": rmspe(col("fake_gcc"), col("input_gcc"), True),
        "mean_ssim": float(col("ssim").mean()),
        "mean_adjusted_ssim": float(col("adjusted_ssim").mean()),
        "n_out_of_range": int(sum(r.out_of_range for r in report.rows)),
        "gcc_rcc_correlation": pearson([s.gcc for s in labelled], [s.rcc for s in labelled])
        if len(labelled) > 1 else None,
        "histograms": {
            "test_gcc": _histogram(col("test_gcc"), INDEX_BINS),
            "fake_gcc": _histogram(col("fake_gcc"), INDEX_BINS),
            "test_rcc": _histogram(col("test_rcc"), INDEX_BINS),
            "fake_rcc": _histogram(col("fake_rcc"), INDEX_BINS),
            "ssim": _histogram(col("ssim"), SSIM_BINS),
            "adjusted_ssim": _histogram(col("adjusted_ssim"), SSIM_BINS),
        },
    }
    return agg


def unseen_gcc_subset(split) -> list:
    """Test samples whose adjusted GCC never occurs in the training labels."""
    seen = {adjust_gcc(s.gcc) for s in split.train}
    subset = [s for s in split.test if adjust_gcc(s.gcc) not in seen]
    if not subset:
        warnings.warn("every test GCC value also occurs in training", RuntimeWarning, stacklevel=2)
    return subset


@dataclass
class ProbeResult:
    input_gcc: float
    side: str
    computed_gcc: float
    image: np.ndarray = field(repr=False)


def out_of_range_probe(model, mask: np.ndarray, gcc_values, *, gcc_range=None, seed: int = 0) -> list[ProbeResult]:
    """Generate at GCC values outside the trained range and measure what comes out."""
    lo, hi = gcc_range if gcc_range is not None else model.metadata.gcc_range
    values = [float(g) for g in np.atleast_1d(gcc_values)]
    inside = [g for g in values if lo <= g <= hi]
    if inside:
        raise ValueError(f"values {inside} lie inside the trained range [{lo}, {hi}]")
    fakes = model.synthesize(adjust_gcc(np.array(values)), mask, seed=seed)
    return [ProbeResult(g, "below" if g < lo else "above", roi_indices(img, mask)[0], img)
            for g, img in zip(values, fakes)]


def diversity_report(model, gcc_values, mask: np.ndarray, n_per_value: int = 8, seed: int = 0) -> list[dict]:
    """Spread of computed GCC/RCC across fakes that share one condition."""
    out = []
    for j, g in enumerate(np.atleast_1d(gcc_values)):
        adj = adjust_gcc(float(g))
        fakes = model.synthesize(np.full(n_per_value, adj), mask, seed=seed + j)
        idx = np.array([roi_indices(f, mask) for f in fakes])
        out.append({"adjusted_gcc": adj, "gcc_mean": float(idx[:, 0].mean()), "gcc_std": float(idx[:, 0].std()),
                    "rcc_mean": float(idx[:, 1].mean()), "rcc_std": float(idx[:, 1].std())})
    return out
