"""Blob chain geometry: parameter container, center chaining, covariances.

A mask is built from k elliptical Gaussian blobs. The first center x1 is
free; every later center hangs off the previous one at fixed distance r
under a learnable relative angle. Scale, aspect, spacing and sharpness are
shared across blobs and stay fixed during optimization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class BlobParams:
    """Full parameter vector for a k-blob chain.

    Learnable subset: x1, theta, alpha. Everything else is fixed.
    Angles are stored as unconstrained reals; canonicalization happens
    only when reporting, never during optimization.
    """

    k: int
    x1: np.ndarray          # (2,) first center, normalized [0,1]^2 coords
    s: float                # blob scale
    a: float                # aspect ratio
    r: float                # inter-center spacing, normalized units
    c: float                # sharpness constant
    theta: np.ndarray       # (k,) per-blob rotation, radians
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (k-1,)

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=np.float64).reshape(2)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.s <= 0 or self.a <= 0 or self.c <= 0:
            raise ValueError(
                f"s, a, c must be positive, got s={self.s} a={self.a} c={self.c}"
            )
        if self.r < 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        if self.theta.shape != (self.k,):
            raise ValueError(
                f"theta must have {self.k} entries, got {self.theta.shape[0]}"
            )
        if self.alpha.shape != (self.k - 1,):
            raise ValueError(
                f"alpha must have {self.k - 1} entries, got {self.alpha.shape[0]}"
            )

    def copy(self) -> "BlobParams":
        return replace(
            self, x1=self.x1.copy(), theta=self.theta.copy(), alpha=self.alpha.copy()
        )

    def to_json(self) -> str:
        doc = {
            "k": self.k,
            "x1": [float(self.x1[0]), float(self.x1[1])],
            "s": self.s,
            "a": self.a,
            "r": self.r,
            "c": self.c,
            "theta": [float(t) for t in self.theta],
            "alpha": [float(t) for t in self.alpha],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BlobParams":
        doc = json.loads(text)
        return cls(
            k=int(doc["k"]),
            x1=np.array(doc["x1"], dtype=np.float64),
            s=float(doc["s"]),
            a=float(doc["a"]),
            r=float(doc["r"]),
            c=float(doc["c"]),
            theta=np.array(doc["theta"], dtype=np.float64),
            alpha=np.array(doc["alpha"], dtype=np.float64),
        )


@dataclass
class Covariance2:
    """Axis-aligned squared extents plus a rotation angle.

    dxx and dyy are the diagonal of the unrotated covariance; the full
    matrix is R(theta) @ diag(dxx, dyy) @ R(theta).T.
    """

    dxx: float
    dyy: float
    theta: float

    def __post_init__(self):
        if self.dxx <= 0 or self.dyy <= 0:
            raise ValueError(f"degenerate covariance: dxx={self.dxx} dyy={self.dyy}")

    def matrix(self) -> np.ndarray:
        ct, st = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[ct, -st], [st, ct]])
        return rot @ np.diag([self.dxx, self.dyy]) @ rot.T


def blob_covariance(s: float, a: float, theta: float, c: float) -> Covariance2:
    """Covariance of one blob: axis extents delta_x = s/sqrt(a), delta_y = s*sqrt(a),
    squared and scaled by the sharpness constant c."""
    if s <= 0 or a <= 0 or c <= 0:
        raise ValueError(f"s, a, c must be positive, got s={s} a={a} c={c}")
    return Covariance2(dxx=c * (s / math.sqrt(a)) ** 2,
                       dyy=c * (s * math.sqrt(a)) ** 2,
                       theta=theta)


def chain_centers(params: BlobParams) -> np.ndarray:
    """Centers of all k blobs, shape (k, 2).

    center[0] = x1; center[i] = center[i-1] + r*(cos alpha_i, sin alpha_i).
    Centers may land outside [0,1]^2; the mask then renders partially
    off-image, which is fine.
    """
    steps = np.zeros((params.k, 2))
    if params.k > 1:
        steps[1:, 0] = params.r * np.cos(params.alpha)
        steps[1:, 1] = params.r * np.sin(params.alpha)
    return params.x1[None, :] + np.cumsum(steps, axis=0)


def center_jacobians(params: BlobParams) -> np.ndarray:
    """Partials of each center w.r.t. the chain angles, shape (k-1, 2).

    Row j holds d(center[i])/d(alpha_j) for any i > j, which is the
    constant tangent (-r*sin alpha_j, r*cos alpha_j); for i <= j the
    partial is zero. d(center[i])/d(x1) is the identity for every i and
    is not materialized.
    """
    if params.k == 1:
        return np.zeros((0, 2))
    return np.stack(
        [-params.r * np.sin(params.alpha), params.r * np.cos(params.alpha)], axis=1
    )


def canonicalize_theta(theta: np.ndarray) -> np.ndarray:
    """Map rotation angles into [-pi/2, pi/2). Reporting only; the raw
    stored values stay unconstrained so gradients see no seams."""
    return np.mod(np.asarray(theta) + np.pi / 2, np.pi) - np.pi / 2
