"""Phenology-camera archive ingestion, mid-day filtering and date-based splitting."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, time
from pathlib import Path

import numpy as np
from PIL import Image

from .indices import adjust_gcc, invert_mask, normalize, resize_half, resize_mask_half

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ("filename", "timestamp_local", "gcc", "rcc")
ROI_ID_PATTERN = re.compile(r"^[A-Z]{2}_\d{4}$")


class DataError(Exception):
    """Raised for unusable archives, manifests or splits."""


class ManifestError(DataError):
    pass


@dataclass(frozen=True)
class LabeledSample:
    image_path: Path
    timestamp: datetime
    site_id: str
    roi_id: str
    gcc: float
    rcc: float | None = None

    def __post_init__(self):
        if not ROI_ID_PATTERN.match(self.roi_id):
            raise ValueError(f"ROI id {self.roi_id!r} is not of the form XX_0000")
        if not 0 < self.gcc < 1:
            raise ValueError(f"gcc {self.gcc} outside (0, 1)")
        if self.rcc is not None and not (self.rcc > 0 and self.gcc + self.rcc < 1):
            raise ValueError(f"rcc {self.rcc} inconsistent with gcc {self.gcc}")

    @property
    def adjusted_gcc(self) -> float:
        return adjust_gcc(self.gcc)

    def to_dict(self) -> dict:
        return {
            "image_path": str(self.image_path),
            "timestamp": self.timestamp.isoformat(),
            "site_id": self.site_id,
            "roi_id": self.roi_id,
            "gcc": self.gcc,
            "rcc": self.rcc,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledSample":
        return cls(Path(d["image_path"]), datetime.fromisoformat(d["timestamp"]), d["site_id"],
                   d["roi_id"], float(d["gcc"]), None if d.get("rcc") is None else float(d["rcc"]))


@dataclass(frozen=True)
class ManifestRow:
    filename: str
    timestamp: datetime
    gcc: float | None
    rcc: float | None


@dataclass(frozen=True)
class ArchiveManifest:
    rows: tuple[ManifestRow, ...]
    source: str

    def __post_init__(self):
        names = [r.filename for r in self.rows]
        if len(set(names)) != len(names):
            dup = next(n for n, c in Counter(names).items() if c > 1)
            raise ManifestError(f"duplicate filename in manifest: {dup}")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_FIELDS)
            for r in self.rows:
                writer.writerow([
                    r.filename,
                    r.timestamp.isoformat(),
                    "" if r.gcc is None else repr(r.gcc),
                    "" if r.rcc is None else repr(r.rcc),
                ])


def _optional_float(text: str) -> float | None:
    text = text.strip()
    if text == "" or text.lower() in {"na", "nan", "none"}:
        return None
    value = float(text)
    return None if math.isnan(value) else value


def read_manifest(path: str | Path) -> ArchiveManifest:
    """Parse a ``filename,timestamp_local,gcc,rcc`` CSV."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: header lacks {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                if not rec["filename"]:
                    raise ValueError("empty filename")
                rows.append(ManifestRow(
                    rec["filename"],
                    datetime.fromisoformat(rec["timestamp_local"]),
                    _optional_float(rec["gcc"] or ""),
                    _optional_float(rec["rcc"] or ""),
                ))
            except (ValueError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed row {rec!r} ({exc})") from exc
    return ArchiveManifest(tuple(rows), str(path))


def read_roistats(path: str | Path, roi_id: str | None = None) -> ArchiveManifest:
    """Adapter for PhenoCam-style ``roistats`` CSV files.

    Lines starting with ``#`` are comments. Per-image GCC/RCC are taken from
    the ``gcc``/``rcc`` columns when present, otherwise computed from the
    ``r_mean``/``g_mean``/``b_mean`` columns.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        try:
            ts = datetime.fromisoformat(f"{rec['date']}T{rec['local_std_time']}")
            gcc = _optional_float(rec.get("gcc", "") or "")
            rcc = _optional_float(rec.get("rcc", "") or "")
            if gcc is None and rec.get("g_mean"):
                r, g, b = (float(rec[k]) for k in ("r_mean", "g_mean", "b_mean"))
                gcc, rcc = g / (r + g + b), r / (r + g + b)
            rows.append(ManifestRow(rec["filename"], ts, gcc, rcc))
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"{path}: malformed roistats record {lineno} ({exc})") from exc
    return ArchiveManifest(tuple(rows), str(path))


def _readable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except Exception:  # noqa: BLE001 - any decoder failure means unreadable
        return False


def ingest_archive(images_dir: str | Path, manifest: ArchiveManifest, site_id: str,
                   roi_id: str) -> list[LabeledSample]:
    """One sample per manifest row that has a GCC label and a readable image."""
    images_dir = Path(images_dir)
    samples = []
    for row in manifest.rows:
        path = images_dir / row.filename
        if not path.exists():
            raise FileNotFoundError(f"manifest references missing image file: {path}")
        if row.gcc is None:
            continue
        if not _readable(path):
            logger.warning("skipping unreadable image %s", path)
            continue
        samples.append(LabeledSample(path, row.timestamp, site_id, roi_id, row.gcc, row.rcc))
    logger.info("ingested %d of %d manifest rows from %s", len(samples), len(manifest.rows), manifest.source)
    return samples


def filter_midday(samples, window: tuple[time, time] = (time(10, 0), time(14, 0))) -> list[LabeledSample]:
    """Keep samples whose local time of day lies in the inclusive ``window``."""
    start, end = window
    if not start < end:
        raise ValueError(f"window start {start} must precede end {end}")
    return [s for s in samples if start <= s.timestamp.time() <= end]


def parse_window(text: str) -> tuple[time, time]:
    """``"10:00-14:00"`` -> ``(time(10), time(14))``."""
    try:
        a, b = text.split("-")
        return time.fromisoformat(a.strip()), time.fromisoformat(b.strip())
    except ValueError as exc:
        raise ValueError(f"bad time window {text!r}; expected HH:MM-HH:MM") from exc


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[LabeledSample, ...]
    test: tuple[LabeledSample, ...]
    gcc_range: tuple[float, float]
    site_id: str
    roi_id: str
    mask_path: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.train and self.test:
            if max(s.timestamp for s in self.train) >= min(s.timestamp for s in self.test):
                raise DataError("train timestamps must precede test timestamps")
        for s in (*self.train, *self.test):
            if (s.site_id, s.roi_id) != (self.site_id, self.roi_id):
                raise DataError(f"sample {s.image_path} belongs to {s.site_id}/{s.roi_id}")
        lo, hi = self.gcc_range
        if not lo < hi:
            raise DataError(f"degenerate GCC range {self.gcc_range}")

    def save(self, path: str | Path) -> None:
        payload = {
            "site_id": self.site_id,
            "roi_id": self.roi_id,
            "gcc_range": list(self.gcc_range),
            "mask_path": None if self.mask_path is None else str(self.mask_path),
            "train": [s.to_dict() for s in self.train],
            "test": [s.to_dict() for s in self.test],
        }
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "DatasetSplit":
        d = json.loads(Path(path).read_text())
        return cls(
            tuple(LabeledSample.from_dict(s) for s in d["train"]),
            tuple(LabeledSample.from_dict(s) for s in d["test"]),
            tuple(d["gcc_range"]),
            d["site_id"],
            d["roi_id"],
            None if d.get("mask_path") is None else Path(d["mask_path"]),
        )

    def with_train(self, train) -> "DatasetSplit":
        """Same split with a replaced (e.g. subsampled) training list."""
        return DatasetSplit(tuple(train), self.test, self.gcc_range, self.site_id, self.roi_id, self.mask_path)


def split_by_date(samples, cutoff: date | datetime, mask_path: str | Path | None = None) -> DatasetSplit:
    """Train on everything strictly before ``cutoff``, test on the rest."""
    if not samples:
        raise DataError("no samples to split")
    if not isinstance(cutoff, datetime):
        cutoff = datetime.combine(cutoff, time())
    ordered = sorted(samples, key=lambda s: s.timestamp)
    train = tuple(s for s in ordered if s.timestamp < cutoff)
    test = tuple(s for s in ordered if s.timestamp >= cutoff)
    if not train:
        raise DataError(f"empty train set for cutoff {cutoff:%Y-%m-%d}")
    if not test:
        raise DataError(f"empty test set for cutoff {cutoff:%Y-%m-%d}")
    ids = {(s.site_id, s.roi_id) for s in ordered}
    if len(ids) != 1:
        raise DataError(f"samples span several site/ROI pairs: {sorted(ids)}")
    site_id, roi_id = ids.pop()
    gccs = [s.gcc for s in train]
    return DatasetSplit(train, test, (min(gccs), max(gccs)), site_id, roi_id,
                        None if mask_path is None else Path(mask_path))


@dataclass
class DatasetStats:
    n_train: int
    n_test: int
    unique_test_gcc: int
    test_gcc_with_multiple: int
    train_histogram: dict[float, int]

    def to_dict(self) -> dict:
        return {
            "n_train": self.n_train,
            "n_test": self.n_test,
            "unique_test_gcc": self.unique_test_gcc,
            "test_gcc_with_multiple": self.test_gcc_with_multiple,
            "train_histogram": {f"{k:.2f}": v for k, v in sorted(self.train_histogram.items())},
        }


def dataset_stats(split: DatasetSplit) -> DatasetStats:
    test_counts = Counter(adjust_gcc(s.gcc) for s in split.test)
    return DatasetStats(
        n_train=len(split.train),
        n_test=len(split.test),
        unique_test_gcc=len(test_counts),
        test_gcc_with_multiple=sum(1 for c in test_counts.values() if c > 1),
        train_histogram=dict(Counter(adjust_gcc(s.gcc) for s in split.train)),
    )


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_mask(path: str | Path) -> np.ndarray:
    """Read an ROI image (black = region) and return the 0/1 mask."""
    with Image.open(path) as im:
        return invert_mask(np.asarray(im.convert("L")))


def load_images(samples, half: bool = True) -> np.ndarray:
    """Stack sample images as float64 ``(N, H, W, 3)``, optionally halved."""
    out = []
    for s in samples:
        img = load_image(s.image_path)
        out.append(resize_half(img) if half else img.astype(np.float64))
    return np.stack(out)


@dataclass
class TrainingSet:
    """In-memory tensors for one site/ROI ready for the training loop."""

    images: np.ndarray  # (N, 3, H, W) float32 in [-1, 1]
    adjusted_gcc: np.ndarray  # (N,) float
    mask: np.ndarray  # (H, W) uint8
    gcc_range: tuple[float, float]
    site_id: str
    roi_id: str

    def __len__(self) -> int:
        return len(self.adjusted_gcc)

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        return TrainingSet(self.images[idx], self.adjusted_gcc[idx], self.mask, self.gcc_range,
                           self.site_id, self.roi_id)


def prepare_training_set(split: DatasetSplit, mask: np.ndarray | None = None, half: bool = True) -> TrainingSet:
    if mask is None:
        if split.mask_path is None:
            raise DataError("split carries no mask path; pass a mask explicitly")
        mask = load_mask(split.mask_path)
    imgs = load_images(split.train, half=half)
    if half:
        mask = resize_mask_half(mask)
    return TrainingSet(
        images=normalize(imgs).transpose(0, 3, 1, 2).astype(np.float32),
        adjusted_gcc=np.array([s.adjusted_gcc for s in split.train]),
        mask=mask.astype(np.uint8),
        gcc_range=split.gcc_range,
        site_id=split.site_id,
        roi_id=split.roi_id,
    )
