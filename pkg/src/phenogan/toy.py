"""Procedural stand-in for a phenology-camera archive.

Each site has a fixed background texture and two vegetation regions (a
deciduous ``DB_1000`` and an evergreen ``EN_1000``). Region chroma follows a
sinusoidal seasonal curve inside a per-ROI GCC band; illumination, chroma
texture and sensor noise vary per image. Manifest labels are measured from the
written pixels with the index functions, never taken from the curve.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .data import ArchiveManifest, ManifestRow
from .indices import invert_mask, roi_indices

MIDDAY_TIMES = [(10 + m // 60, m % 60) for m in range(0, 241, 30)]
FULL_DAY_TIMES = [(m // 60, m % 60) for m in range(0, 24 * 60, 30)]

DEFAULT_BANDS = {"DB_1000": (0.30, 0.46), "EN_1000": (0.34, 0.39)}
# day-of-year of the seasonal GCC minimum
DEFAULT_PHASE = {"DB_1000": 20.0, "EN_1000": 60.0}


@dataclass
class ToyArchive:
    root: Path
    site_id: str
    images_dir: Path
    manifests: dict[str, ArchiveManifest] = field(default_factory=dict)
    manifest_paths: dict[str, Path] = field(default_factory=dict)
    mask_paths: dict[str, Path] = field(default_factory=dict)

    @classmethod
    def open(cls, root: str | Path) -> "ToyArchive":
        from .data import read_manifest

        root = Path(root)
        meta = json.loads((root / "archive.json").read_text())
        arc = cls(root, meta["site_id"], root / meta["images_dir"])
        for roi_id, info in meta["rois"].items():
            arc.manifest_paths[roi_id] = root / info["manifest"]
            arc.mask_paths[roi_id] = root / info["mask"]
            arc.manifests[roi_id] = read_manifest(arc.manifest_paths[roi_id])
        return arc


def _smooth_field(rng, shape, sigma):
    f = gaussian_filter(rng.standard_normal(shape), sigma)
    return f / (np.abs(f).max() + 1e-12)


def _roi_masks(rng, h, w) -> dict[str, np.ndarray]:
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w]).reshape(2, 1, 1)
    masks = {}
    for roi_id, (cy, cx) in {"DB_1000": (0.58, 0.32), "EN_1000": (0.55, 0.76)}.items():
        cy += rng.uniform(-0.04, 0.04)
        cx += rng.uniform(-0.04, 0.04)
        ry = rng.uniform(0.14, 0.2)
        rx = rng.uniform(0.2, 0.26) if roi_id == "DB_1000" else rng.uniform(0.14, 0.2)
        masks[roi_id] = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0).astype(np.uint8)
    masks["EN_1000"] &= 1 - masks["DB_1000"]
    return masks


def seasonal_gcc(doy: float, band: tuple[float, float], phase: float) -> float:
    lo, hi = band
    return lo + (hi - lo) * 0.5 * (1 - np.cos(2 * np.pi * (doy - phase) / 365.25))


def seasonal_rcc(doy: float, gcc: float, band: tuple[float, float]) -> float:
    """Redness drops as canopy greens and bumps up in autumn."""
    lo, hi = band
    frac = (gcc - lo) / (hi - lo)
    return 0.39 - 0.05 * frac + 0.04 * np.exp(-(((doy - 285) / 18) ** 2))


def generate_toy_archive(out_dir: str | Path, n_days: int = 200, image_size: tuple[int, int] = (128, 128),
                         seed: int = 0, site_id: str = "toysite", start: date = date(2017, 1, 1),
                         day_stride: int = 9, bands: dict | None = None, full_day: bool = False,
                         noise_sigma: float = 3.0) -> ToyArchive:
    """Write a procedural archive and return its manifests.

    ``n_days`` capture days ``day_stride`` days apart starting at ``start``;
    each day holds 9 mid-day frames (10:00 to 14:00 every 30 min), or 48
    frames around the clock with ``full_day``.
    """
    if n_days < 1:
        raise ValueError("n_days must be at least 1")
    bands = {**DEFAULT_BANDS, **(bands or {})}
    root = Path(out_dir)
    images_dir = root / "images"
    (root / "roi").mkdir(parents=True, exist_ok=True)
    images_dir.mkdir(parents=True, exist_ok=True)
    h, w = image_size
    ss = np.random.SeedSequence(seed)
    layout_ss, image_ss = ss.spawn(2)
    rng = np.random.default_rng(layout_ss)

    masks = _roi_masks(rng, h, w)
    lum = 0.55 + 0.35 * _smooth_field(rng, (h, w), 1.5)
    chroma_tex = 0.012 * _smooth_field(rng, (h, w), 1.0)
    horizon = int(h * rng.uniform(0.28, 0.36))
    bg = np.zeros((h, w, 3))
    bg[:horizon] = np.array([0.28, 0.33, 0.39]) * 3
    bg[horizon:] = np.array([0.40, 0.36, 0.24]) * 3
    bg *= (0.85 + 0.15 * _smooth_field(rng, (h, w), 3.0))[..., None]

    mask_paths, manifest_paths, rows_by_roi = {}, {}, {roi: [] for roi in masks}
    for roi_id, m in masks.items():
        mask_paths[roi_id] = root / "roi" / f"{roi_id}.png"
        Image.fromarray(np.where(m == 1, 0, 255).astype(np.uint8), mode="L").save(mask_paths[roi_id])
    read_back = {roi: invert_mask(np.asarray(Image.open(p))) for roi, p in mask_paths.items()}

    times = FULL_DAY_TIMES if full_day else MIDDAY_TIMES
    frame_seeds = image_ss.spawn(n_days * len(times))
    k = 0
    for d in range(n_days):
        day = start + timedelta(days=d * day_stride)
        doy = day.timetuple().tm_yday
        for hh, mm in times:
            frng = np.random.default_rng(frame_seeds[k])
            k += 1
            ts = datetime(day.year, day.month, day.day, hh, mm)
            hour = hh + mm / 60
            sun = max(np.sin(np.pi * (hour - 6) / 12), 0.03)
            illum = 170 * sun * frng.uniform(0.8, 1.15)
            img = bg.copy()
            for roi_id, m in masks.items():
                g = seasonal_gcc(doy, bands[roi_id], DEFAULT_PHASE[roi_id]) + frng.normal(0, 0.002)
                r = seasonal_rcc(doy, g, bands[roi_id]) + frng.normal(0, 0.002)
                gmap = g + chroma_tex
                chroma = np.stack([np.full((h, w), r), gmap, 1 - r - gmap], axis=-1) * 3
                img = np.where(m[..., None] == 1, chroma, img)
            img = img * lum[..., None] * illum + frng.normal(0, noise_sigma, (h, w, 3))
            pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
            name = f"{site_id}_{ts:%Y_%m_%d_%H%M%S}.png"
            Image.fromarray(pixels, mode="RGB").save(images_dir / name)
            for roi_id in masks:
                gcc, rcc = roi_indices(pixels, read_back[roi_id])
                rows_by_roi[roi_id].append(ManifestRow(name, ts, gcc, rcc))

    arc = ToyArchive(root, site_id, images_dir)
    meta = {"site_id": site_id, "images_dir": "images", "seed": seed, "rois": {}}
    for roi_id, rows in rows_by_roi.items():
        manifest = ArchiveManifest(tuple(rows), str(images_dir))
        manifest_paths[roi_id] = root / f"{roi_id}_manifest.csv"
        manifest.write_csv(manifest_paths[roi_id])
        arc.manifests[roi_id] = manifest
        meta["rois"][roi_id] = {"manifest": manifest_paths[roi_id].name, "mask": f"roi/{roi_id}.png",
                                "gcc_band": list(bands[roi_id])}
    arc.manifest_paths = manifest_paths
    arc.mask_paths = mask_paths
    (root / "archive.json").write_text(json.dumps(meta, indent=1))
    return arc
