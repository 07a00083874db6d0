"""Soft mask rendering and its analytic backward pass.

Forward: each blob contributes exp(-0.5 * d^T C^{-1} d) at every pixel,
with C the rotated covariance from geometry.blob_covariance; the mask is
the pixel-wise mean over blobs. Backward differentiates the weighted sum
<upstream, mask> w.r.t. the learnable subset (x1, theta, alpha) only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import BlobParams, blob_covariance, center_jacobians, chain_centers

MSKF_MAGIC = b"MSKF"


@dataclass
class GridSpec:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be >= 1x1, got {self.width}x{self.height}")

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates in normalized units, each (H, W).
        Pixel (px, py) maps to ((px+0.5)/W, (py+0.5)/H); y grows downward."""
        xs = (np.arange(self.width, dtype=np.float64) + 0.5) / self.width
        ys = (np.arange(self.height, dtype=np.float64) + 0.5) / self.height
        return np.meshgrid(xs, ys)


@dataclass
class BlobGradients:
    """Gradients for the learnable subset. Fixed parameters (s, a, r, c, k)
    have no slot here at all, so nothing downstream can update them."""

    d_x1: np.ndarray      # (2,)
    d_theta: np.ndarray   # (k,)
    d_alpha: np.ndarray   # (k-1,)

    def __post_init__(self):
        for name, v in (("d_x1", self.d_x1), ("d_theta", self.d_theta),
                        ("d_alpha", self.d_alpha)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite gradient in {name}")


def render_blob(center: np.ndarray, s: float, a: float, theta: float, c: float,
                grid: GridSpec) -> np.ndarray:
    """One blob's field over the grid, shape (H, W), values in (0, 1]."""
    cov = blob_covariance(s, a, theta, c)
    gx, gy = grid.coords()
    dx = gx - center[0]
    dy = gy - center[1]
    ct, st = np.cos(theta), np.sin(theta)
    # rotate the offset into the blob frame; the quadratic form is then diagonal
    ux = ct * dx + st * dy
    uy = -st * dx + ct * dy
    return np.exp(-0.5 * (ux * ux / cov.dxx + uy * uy / cov.dyy))


def render_mask(params: BlobParams, grid: GridSpec) -> np.ndarray:
    """Mean of the k individual blob fields, shape (H, W)."""
    centers = chain_centers(params)
    acc = np.zeros((grid.height, grid.width))
    for i in range(params.k):
        acc += render_blob(centers[i], params.s, params.a,
                           float(params.theta[i]), params.c, grid)
    return acc / params.k


def mask_backward(params: BlobParams, grid: GridSpec,
                  upstream: np.ndarray) -> BlobGradients:
    """Gradient of sum(upstream * render_mask(params)) w.r.t. x1, theta, alpha.

    Per blob, the Gaussian's center gradient is G * C^{-1} d evaluated in
    closed form in the blob frame; theta couples through the frame rotation.
    Center gradients chain into x1 (identity) and into each alpha_j through
    the suffix of centers it moves.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (grid.height, grid.width):
        raise ValueError(
            f"upstream shape {upstream.shape} does not match grid "
            f"{grid.height}x{grid.width}"
        )
    centers = chain_centers(params)
    cov = blob_covariance(params.s, params.a, 0.0, params.c)
    dxx, dyy = cov.dxx, cov.dyy
    gx, gy = grid.coords()

    g_centers = np.zeros((params.k, 2))
    d_theta = np.zeros(params.k)
    for i in range(params.k):
        th = float(params.theta[i])
        ct, st = np.cos(th), np.sin(th)
        dx = gx - centers[i, 0]
        dy = gy - centers[i, 1]
        ux = ct * dx + st * dy
        uy = -st * dx + ct * dy
        gi = np.exp(-0.5 * (ux * ux / dxx + uy * uy / dyy))
        common = upstream * gi / params.k
        # d(blob)/d(center) = blob * R @ (ux/dxx, uy/dyy), rotated back
        adx = ct * (ux / dxx) - st * (uy / dyy)
        ady = st * (ux / dxx) + ct * (uy / dyy)
        g_centers[i, 0] = np.sum(common * adx)
        g_centers[i, 1] = np.sum(common * ady)
        d_theta[i] = np.sum(common * (-ux * uy) * (1.0 / dxx - 1.0 / dyy))

    d_x1 = g_centers.sum(axis=0)
    if params.k > 1:
        tangents = center_jacobians(params)
        # alpha_j moves centers j+1..k-1 by the same tangent vector
        suffix = np.cumsum(g_centers[::-1], axis=0)[::-1]
        d_alpha = np.einsum("ij,ij->i", tangents, suffix[1:])
    else:
        d_alpha = np.zeros(0)
    return BlobGradients(d_x1=d_x1, d_theta=d_theta, d_alpha=d_alpha)


def finite_diff_check(params: BlobParams, grid: GridSpec, step: float,
                      upstream: np.ndarray) -> dict:
    """Compare mask_backward against central finite differences.

    Returns {"max_abs_err", "max_rel_err", "table"} where table rows are
    (name, analytic, numeric, abs_err, rel_err). Relative error uses the
    larger magnitude as denominator and is reported as 0 for components
    whose magnitudes both sit at or below 1e-8.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    grads = mask_backward(params, grid, upstream)
    analytic = np.concatenate([grads.d_x1, grads.d_theta, grads.d_alpha])
    names = (["x1.x", "x1.y"]
             + [f"theta[{i}]" for i in range(params.k)]
             + [f"alpha[{i}]" for i in range(params.k - 1)])

    def objective(p: BlobParams) -> float:
        return float(np.sum(upstream * render_mask(p, grid)))

    numeric = np.zeros_like(analytic)
    for j in range(analytic.size):
        plus, minus = params.copy(), params.copy()
        if j < 2:
            plus.x1[j] += step
            minus.x1[j] -= step
        elif j < 2 + params.k:
            plus.theta[j - 2] += step
            minus.theta[j - 2] -= step
        else:
            plus.alpha[j - 2 - params.k] += step
            minus.alpha[j - 2 - params.k] -= step
        numeric[j] = (objective(plus) - objective(minus)) / (2 * step)

    abs_err = np.abs(analytic - numeric)
    mag = np.maximum(np.abs(analytic), np.abs(numeric))
    rel_err = np.where(mag > 1e-8, abs_err / np.maximum(mag, 1e-300), 0.0)
    table = [(names[j], float(analytic[j]), float(numeric[j]),
              float(abs_err[j]), float(rel_err[j])) for j in range(analytic.size)]
    return {
        "max_abs_err": float(abs_err.max()) if abs_err.size else 0.0,
        "max_rel_err": float(rel_err.max()) if rel_err.size else 0.0,
        "table": table,
    }


def dump_mask(values: np.ndarray, path: str) -> None:
    """Lossless float dump: 16-byte header (magic, u32 width, u32 height,
    u32 reserved, little-endian) then f32 row-major values."""
    values = np.asarray(values)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(MSKF_MAGIC)
        fh.write(struct.pack("<III", w, h, 0))
        fh.write(values.astype("<f4").tobytes(order="C"))


def load_mask(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != MSKF_MAGIC:
            raise ValueError(f"not a mask dump: {path}")
        w, h, _ = struct.unpack("<III", header[4:])
        data = fh.read()
    expected = 4 * w * h
    if len(data) != expected:
        raise ValueError(f"mask dump truncated: expected {expected} payload bytes, "
                         f"got {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(h, w).astype(np.float64)


def to_u8(values: np.ndarray) -> np.ndarray:
    """Quantize [0,1] floats to u8 with round-half-up (0.5/255 boundary
    goes up, unlike numpy's round-half-even)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_mask_png(values: np.ndarray, path: str) -> None:
    Image.fromarray(to_u8(values), mode="L").save(path, format="PNG")
