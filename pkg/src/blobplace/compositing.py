"""Convex mask compositing of foreground over background, with gradients.

Images are (H, W, 3) float64 arrays in [0,1] on load. The learnable
foreground is deliberately NOT clamped during optimization (clamping kills
gradients); clamping happens once on export.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .renderer import to_u8


def composite(mask: np.ndarray, fg: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """I_c = M*fg + (1-M)*bg, pixelwise over channels."""
    _check_dims(mask, fg, bg)
    m = mask[:, :, None]
    return m * fg + (1.0 - m) * bg


def composite_backward(mask: np.ndarray, fg: np.ndarray, bg: np.ndarray,
                       grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of <grad_out, composite> w.r.t. the mask and the foreground.

    Returns (grad_mask, grad_fg): grad_mask(p) sums grad_out*(fg-bg) over
    channels; grad_fg(p,ch) = grad_out(p,ch)*M(p). The background is fixed
    and gets no gradient.
    """
    _check_dims(mask, fg, bg)
    if grad_out.shape != fg.shape:
        raise ValueError(f"grad_out shape {grad_out.shape} != image shape {fg.shape}")
    grad_mask = np.sum(grad_out * (fg - bg), axis=2)
    grad_fg = grad_out * mask[:, :, None]
    return grad_mask, grad_fg


def _check_dims(mask: np.ndarray, fg: np.ndarray, bg: np.ndarray) -> None:
    if fg.shape != bg.shape or fg.ndim != 3 or fg.shape[2] != 3:
        raise ValueError(f"image shapes must match as (H, W, 3): fg {fg.shape}, "
                         f"bg {bg.shape}")
    if mask.shape != fg.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != image plane {fg.shape[:2]}")


def load_image(path: str) -> np.ndarray:
    """8-bit PNG to float via v/255. No gamma transform; values as-is."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def save_image(values: np.ndarray, path: str) -> None:
    """Clamp to [0,1], quantize round-half-up, write 8-bit PNG."""
    Image.fromarray(to_u8(values), mode="RGB").save(path, format="PNG")
