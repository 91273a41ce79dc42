"""Chromatic-coordinate pixel math for phenology camera imagery.

All index arithmetic runs in float64 whatever the source bit depth.
Images are ``(H, W, 3)`` arrays of red/green/blue digital numbers, masks are
``(H, W)`` arrays with 1 inside the region of interest.
"""
from __future__ import annotations

import logging
import warnings
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 128


class EmptyMaskError(ValueError):
    """The region-of-interest mask selects no usable pixel."""


def _channel_sum(p) -> float:
    r, g, b = (float(c) for c in p)
    if min(r, g, b) < 0:
        raise ValueError(f"negative channel intensity in pixel {tuple(p)}")
    total = r + g + b
    if total <= 0:
        raise ZeroDivisionError("chromatic coordinate undefined for a black pixel")
    return total


def pixel_gcc(p) -> float:
    """Green chromatic coordinate ``G / (R + G + B)`` of one pixel."""
    return float(p[1]) / _channel_sum(p)


def pixel_rcc(p) -> float:
    """Red chromatic coordinate ``R / (R + G + B)`` of one pixel."""
    return float(p[0]) / _channel_sum(p)


def chromatic_coordinates(img: np.ndarray) -> np.ndarray:
    """Per-pixel ``(r, g, b)`` fractions; NaN where the channel sum is zero."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    total = img.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = img / total
    out[np.broadcast_to(total <= 0, out.shape)] = np.nan
    return out


def _roi_fractions(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    mask = np.asarray(mask)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {img.shape[:2]}")
    inside = mask.astype(bool)
    if not inside.any():
        raise EmptyMaskError("region-of-interest mask is empty")
    frac = chromatic_coordinates(img)[inside]
    valid = ~np.isnan(frac[:, 0])
    n_bad = int((~valid).sum())
    if n_bad:
        if n_bad == len(valid):
            raise EmptyMaskError("every pixel inside the region of interest is black")
        warnings.warn(f"{n_bad} zero-sum pixels excluded from ROI mean", RuntimeWarning, stacklevel=3)
    return frac[valid]


def roi_gcc(img: np.ndarray, mask: np.ndarray) -> float:
    """Mean per-pixel GCC over the masked pixels."""
    return float(_roi_fractions(img, mask)[:, 1].mean())


def roi_rcc(img: np.ndarray, mask: np.ndarray) -> float:
    """Mean per-pixel RCC over the masked pixels."""
    return float(_roi_fractions(img, mask)[:, 0].mean())


def roi_indices(img: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """``(gcc, rcc)`` over the ROI in a single pass."""
    frac = _roi_fractions(img, mask)
    return float(frac[:, 1].mean()), float(frac[:, 0].mean())


def adjust_gcc(gcc):
    """GCC as a percentage rounded half-up to two decimals.

    Rounding is done on the shortest decimal representation of the float, so
    ``0.3295`` maps to ``32.95`` rather than falling foul of binary error.
    Accepts a scalar or an array-like (returns an ndarray).
    """
    if np.ndim(gcc):
        return np.array([adjust_gcc(float(g)) for g in np.ravel(gcc)]).reshape(np.shape(gcc))
    value = Decimal(repr(float(gcc))) * 100
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def invert_adjust(adjusted):
    """Back from percent to a fraction."""
    return np.asarray(adjusted, dtype=np.float64) / 100.0 if np.ndim(adjusted) else float(adjusted) / 100.0


def invert_mask(raw: np.ndarray, threshold: int = MASK_THRESHOLD) -> np.ndarray:
    """Turn a black-on-white ROI image into a 0/1 mask with 1 over the ROI.

    Pixels darker than ``threshold`` count as ROI, which absorbs anti-aliased
    edges in non-binary mask files.
    """
    raw = np.asarray(raw)
    if raw.ndim == 3 and raw.shape[-1] == 1:
        raw = raw[..., 0]
    if raw.ndim != 2:
        raise ValueError(f"ROI image must be single-channel, got shape {raw.shape}")
    mask = (raw < threshold).astype(np.uint8)
    if not mask.any():
        raise EmptyMaskError("ROI image has no dark pixels")
    return mask


def bilinear_resize(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling with half-pixel centres and edge clamping, float64."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    oh, ow = out_hw

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, oh)
    x0, x1, fx = axis(w, ow)
    extra = (1,) * (img.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_half(img: np.ndarray) -> np.ndarray:
    """Halve both spatial dimensions with bilinear interpolation."""
    h, w = np.shape(img)[:2]
    if h % 2 or w % 2:
        raise ValueError(f"resize_half needs even dimensions, got {h}x{w}")
    return bilinear_resize(img, (h // 2, w // 2))


def resize_mask_half(mask: np.ndarray) -> np.ndarray:
    """Halve a 0/1 mask, keeping only output pixels whose 2x2 source block lies wholly in the ROI.

    Partially covered blocks would blend outside colours into the ROI mean of
    a halved image; dropping them keeps half-resolution indices faithful.
    """
    out = (resize_half(mask) >= 1.0).astype(np.uint8)
    if not out.any():
        raise EmptyMaskError("ROI vanishes when the mask is halved")
    return out


def normalize(img: np.ndarray) -> np.ndarray:
    """Map [0, 255] linearly onto [-1, 1]."""
    return np.asarray(img, dtype=np.float64) / 127.5 - 1.0


def denormalize(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`, clipped to [0, 255]."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) * 127.5, 0.0, 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
