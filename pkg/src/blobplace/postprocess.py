"""Soft mask to inpainting mask: binarize, dilate, plus mask metrics."""

from __future__ import annotations

import numpy as np
from PIL import Image
from scipy import ndimage

DEFAULT_THRESHOLD = 0.2
DEFAULT_KERNEL = 15
REFERENCE_RESOLUTION = 512


def binarize(field: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Bit set iff value >= threshold (inclusive keeps the exact-threshold
    contour inside the mask)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return np.asarray(field) >= threshold


def dilate(mask: np.ndarray, kernel: int = DEFAULT_KERNEL) -> np.ndarray:
    """Morphological dilation with a kernel x kernel square element.
    kernel must be odd; 1 is the identity."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be an odd integer >= 1, got {kernel}")
    mask = np.asarray(mask, dtype=bool)
    if kernel == 1:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=np.ones((kernel, kernel),
                                                           dtype=bool))


def mask_area_fraction(mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    return float(mask.sum()) / mask.size


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; two empty masks count as identical (1.0)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)


def scaled_kernel(width: int, height: int, base: int = DEFAULT_KERNEL,
                  base_resolution: int = REFERENCE_RESOLUTION) -> int:
    """Dilation kernel for a non-reference resolution: scale the base
    kernel by min(side)/reference, then snap to the nearest odd integer
    (ties resolved toward the unrounded value), floor 1."""
    raw = base * min(width, height) / base_resolution
    k = round(raw)
    if k % 2 == 0:
        k = k + 1 if raw >= k else k - 1
    return max(k, 1)


def save_binary_png(mask: np.ndarray, path: str) -> None:
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_binary_png(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128
