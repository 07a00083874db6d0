"""Regenerate the bundled demo backgrounds.

Both images are procedural so the repository carries no third-party image
data. Run from the repo root: python scripts/make_assets.py
"""

import os

import numpy as np
from PIL import Image

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "blobplace",
                   "assets")


def vertical_gradient(h, w, top, bottom):
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    return (1 - t) * np.asarray(top) + t * np.asarray(bottom)


def paint_rect(img, y0, y1, x0, x1, color, alpha=1.0):
    region = img[y0:y1, x0:x1]
    img[y0:y1, x0:x1] = (1 - alpha) * region + alpha * np.asarray(color)


def finish(img, seed, path):
    rng = np.random.default_rng(seed)
    img = img + rng.normal(0.0, 0.008, img.shape)
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    r2 = ((yy - cy) / h) ** 2 + ((xx - cx) / w) ** 2
    img = img * (1.0 - 0.35 * r2)[:, :, None]
    u8 = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")
    print(path)


def room():
    h = w = 512
    img = np.zeros((h, w, 3))
    split = int(h * 0.62)
    img[:split] = vertical_gradient(split, w, (0.74, 0.76, 0.80),
                                    (0.64, 0.66, 0.72))
    img[split:] = vertical_gradient(h - split, w, (0.50, 0.41, 0.33),
                                    (0.36, 0.29, 0.23))
    paint_rect(img, split - 6, split + 2, 0, w, (0.30, 0.26, 0.22))
    # window with four panes
    paint_rect(img, 60, 200, 60, 200, (0.42, 0.40, 0.38))
    paint_rect(img, 68, 192, 68, 192, (0.84, 0.88, 0.94))
    paint_rect(img, 68, 192, 128, 132, (0.42, 0.40, 0.38))
    paint_rect(img, 128, 132, 68, 192, (0.42, 0.40, 0.38))
    # rug
    yy, xx = np.mgrid[0:h, 0:w]
    rug = (((yy - 440) / 52.0) ** 2 + ((xx - 256) / 180.0) ** 2) <= 1.0
    img[rug] = 0.55 * img[rug] + 0.45 * np.array([0.46, 0.20, 0.18])
    # sofa on the right: seat, backrest, armrests, shadow
    paint_rect(img, 332, 352, 300, 470, (0.12, 0.12, 0.13), alpha=0.35)
    paint_rect(img, 250, 340, 306, 464, (0.22, 0.36, 0.40))
    paint_rect(img, 214, 258, 306, 464, (0.25, 0.40, 0.44))
    paint_rect(img, 246, 336, 294, 314, (0.19, 0.32, 0.36))
    paint_rect(img, 246, 336, 456, 476, (0.19, 0.32, 0.36))
    paint_rect(img, 262, 300, 318, 384, (0.28, 0.44, 0.48))
    paint_rect(img, 262, 300, 388, 452, (0.28, 0.44, 0.48))
    # framed picture
    paint_rect(img, 90, 170, 330, 430, (0.28, 0.24, 0.20))
    paint_rect(img, 98, 162, 338, 422, (0.70, 0.62, 0.50))
    finish(img, 7, os.path.join(OUT, "room.png"))


def park():
    h, w = 448, 768
    img = np.zeros((h, w, 3))
    horizon = int(h * 0.55)
    img[:horizon] = vertical_gradient(horizon, w, (0.62, 0.76, 0.90),
                                      (0.78, 0.86, 0.93))
    img[horizon:] = vertical_gradient(h - horizon, w, (0.38, 0.52, 0.30),
                                      (0.30, 0.42, 0.24))
    # gravel path narrowing toward the horizon
    yy, xx = np.mgrid[0:h, 0:w]
    t = np.clip((yy - horizon) / (h - horizon), 0, 1)
    half = 30 + 150 * t
    path = (yy >= horizon) & (np.abs(xx - w * 0.5) <= half)
    img[path] = 0.3 * img[path] + 0.7 * np.array([0.62, 0.58, 0.50])
    # tree line
    for cx, cy, r, shade in ((110, horizon - 30, 70, 0.30),
                             (620, horizon - 44, 90, 0.26),
                             (710, horizon - 16, 56, 0.34)):
        blob = ((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r
        img[blob] = np.array([0.16, shade, 0.14])
        trunk = (yy > cy) & (yy < horizon + 10) & (np.abs(xx - cx) < 7)
        img[trunk] = np.array([0.30, 0.22, 0.14])
    # bench: two plank rows on dark legs
    paint_rect(img, 300, 312, 150, 330, (0.46, 0.32, 0.18))
    paint_rect(img, 318, 330, 150, 330, (0.42, 0.29, 0.16))
    paint_rect(img, 258, 268, 150, 330, (0.46, 0.32, 0.18))
    for x in (158, 318):
        paint_rect(img, 312, 368, x, x + 10, (0.20, 0.16, 0.12))
    paint_rect(img, 366, 376, 140, 344, (0.10, 0.12, 0.08), alpha=0.4)
    finish(img, 12, os.path.join(OUT, "park_wide.png"))


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    room()
    park()
