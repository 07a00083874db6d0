"""Training loop: render, composite, query the oracle, backpropagate, step.

AdamW with weight decay 0 (so effectively Adam) under a cosine schedule,
with separate learning rates for the foreground image and the blob
parameters. Only x1, theta, alpha and foreground pixels are ever updated;
s, a, r, c, k are fixed by construction. Optional overlap penalty pushes
the current soft mask away from previously placed (frozen) masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compositing import composite, composite_backward
from .errors import NumericError, ProtocolError, TransportError
from .geometry import BlobParams
from .guidance import GuidanceOracle
from .renderer import GridSpec, mask_backward, render_mask

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def default_blob_params(k: int = 5, s: float = 0.6, a: float = 2.0,
                        r: float = 0.01, c: float = 0.02) -> BlobParams:
    """Default initialization: centered vertical chain (a standing-body
    prior): x1 at the image center, theta 0, every chain angle pi/2
    (straight down in image coordinates)."""
    return BlobParams(k=k, x1=np.array([0.5, 0.5]), s=s, a=a, r=r, c=c,
                      theta=np.zeros(k), alpha=np.full(k - 1, np.pi / 2))


@dataclass
class TrainConfig:
    iterations: int = 1000
    lr_fg: float = 0.2
    lr_blob: float = 0.1
    betas: tuple[float, float] = ADAM_BETAS
    eps: float = ADAM_EPS
    weight_decay: float = 0.0
    guidance_scale: float = 200.0
    resolution: tuple[int, int] = (512, 512)   # (width, height)
    snapshot_every: int = 100
    base_seed: int = 0
    overlap_weight: float = 0.0
    frozen_masks: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.lr_fg <= 0 or self.lr_blob <= 0:
            raise ValueError(f"learning rates must be positive, got "
                             f"lr_fg={self.lr_fg} lr_blob={self.lr_blob}")
        if self.overlap_weight < 0:
            raise ValueError(f"overlap_weight must be >= 0, got "
                             f"{self.overlap_weight}")
        if self.snapshot_every < 1:
            raise ValueError(f"snapshot_every must be >= 1, got "
                             f"{self.snapshot_every}")


@dataclass
class OptimizationResult:
    params: BlobParams
    foreground: np.ndarray
    mask: np.ndarray
    # trace rows are (step, lr_blob, lr_fg, loss or None)
    loss_trace: list[tuple[int, float, float, float | None]]
    # snapshots are (step, soft mask, composite), captured before the update
    snapshots: list[tuple[int, np.ndarray, np.ndarray]]
    aborted: str | None = None
    abort_kind: str | None = None


def cosine_lr(step: int, total_steps: int, lr_max: float) -> float:
    """Cosine decay from lr_max at step 0 toward 0 at step = total_steps."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    return 0.5 * lr_max * (1.0 + math.cos(math.pi * step / total_steps))


class AdamGroup:
    """Moment accumulators for one parameter group."""

    def __init__(self, name: str, shape: tuple[int, ...]):
        self.name = name
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)


def adamw_step(state: AdamGroup, params: np.ndarray, grads: np.ndarray,
               lr: float, step: int,
               betas: tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS,
               weight_decay: float = 0.0) -> np.ndarray:
    """One bias-corrected update; step is 0-based. Decoupled weight decay,
    which at decay 0 reduces to the classic adaptive-moment update."""
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape "
                         f"{params.shape} for group {state.name}")
    if not np.all(np.isfinite(grads)):
        raise NumericError(f"non-finite gradient in {state.name} at step {step}")
    b1, b2 = betas
    state.m = b1 * state.m + (1 - b1) * grads
    state.v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = state.m / (1 - b1 ** (step + 1))
    v_hat = state.v / (1 - b2 ** (step + 1))
    return params - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * params)


def overlap_penalty(current_soft: np.ndarray, frozen: list[np.ndarray],
                    lam: float) -> tuple[float, np.ndarray]:
    """loss = lam * sum_f mean(current * f); grad(p) = lam * sum_f f(p)/(H*W).

    Frozen fields are plain float arrays in [0,1]; binarized-and-dilated
    masks (which contain exact 0s and 1s) are accepted.
    """
    grad = np.zeros_like(current_soft)
    loss = 0.0
    for f in frozen:
        if f.shape != current_soft.shape:
            raise ValueError(f"frozen mask shape {f.shape} != current "
                             f"{current_soft.shape}")
        loss += lam * float(np.mean(current_soft * f))
        grad += lam * f / current_soft.size
    return loss, grad


def run_optimization(bg: np.ndarray, init: BlobParams, oracle: GuidanceOracle,
                     cfg: TrainConfig) -> OptimizationResult:
    """Run cfg.iterations of the mask/foreground optimization.

    Oracle transport and protocol failures, and any non-finite loss or
    gradient, abort the run; the partial result comes back with `aborted`
    set to a diagnostic and `abort_kind` in {transport, protocol, numeric}.
    """
    w, h = cfg.resolution
    if bg.shape != (h, w, 3):
        raise ValueError(f"background shape {bg.shape} does not match "
                         f"configured resolution {w}x{h}")
    grid = GridSpec(width=w, height=h)
    params = init.copy()
    fixed = (init.k, init.s, init.a, init.r, init.c)
    fg = bg.copy()

    st_fg = AdamGroup("foreground", fg.shape)
    st_x1 = AdamGroup("x1", (2,))
    st_theta = AdamGroup("theta", (params.k,))
    st_alpha = AdamGroup("alpha", (max(params.k - 1, 0),))

    trace: list[tuple[int, float, float, float | None]] = []
    snapshots: list[tuple[int, np.ndarray, np.ndarray]] = []

    def partial(reason: str, kind: str, mask: np.ndarray) -> OptimizationResult:
        return OptimizationResult(params=params, foreground=fg, mask=mask,
                                  loss_trace=trace, snapshots=snapshots,
                                  aborted=reason, abort_kind=kind)

    mask = render_mask(params, grid)
    for step in range(cfg.iterations):
        mask = render_mask(params, grid)
        image = composite(mask, fg, bg)
        if step % cfg.snapshot_every == 0:
            assert (params.k, params.s, params.a, params.r, params.c) == fixed
            snapshots.append((step, mask.copy(), image.copy()))

        try:
            grad_img, loss = oracle.evaluate(image, step, cfg.base_seed)
        except TransportError as exc:
            return partial(str(exc), "transport", mask)
        except ProtocolError as exc:
            return partial(str(exc), "validation", mask)
        pen_loss, pen_grad = overlap_penalty(mask, cfg.frozen_masks,
                                             cfg.overlap_weight)
        total_loss = None if loss is None else loss + pen_loss
        if loss is not None and not math.isfinite(loss):
            trace.append((step, cosine_lr(step, cfg.iterations, cfg.lr_blob),
                          cosine_lr(step, cfg.iterations, cfg.lr_fg), loss))
            return partial(f"non-finite loss {loss} at step {step}",
                           "numeric", mask)

        grad_mask, grad_fg = composite_backward(mask, fg, bg, grad_img)
        grad_mask = grad_mask + pen_grad
        lr_b = cosine_lr(step, cfg.iterations, cfg.lr_blob)
        lr_f = cosine_lr(step, cfg.iterations, cfg.lr_fg)
        trace.append((step, lr_b, lr_f, total_loss))
        try:
            grads = mask_backward(params, grid, grad_mask)
            fg = adamw_step(st_fg, fg, grad_fg, lr_f, step,
                            cfg.betas, cfg.eps, cfg.weight_decay)
            params.x1 = adamw_step(st_x1, params.x1, grads.d_x1, lr_b, step,
                                   cfg.betas, cfg.eps, cfg.weight_decay)
            params.theta = adamw_step(st_theta, params.theta, grads.d_theta,
                                      lr_b, step, cfg.betas, cfg.eps,
                                      cfg.weight_decay)
            if params.k > 1:
                params.alpha = adamw_step(st_alpha, params.alpha, grads.d_alpha,
                                          lr_b, step, cfg.betas, cfg.eps,
                                          cfg.weight_decay)
        except (NumericError, ValueError) as exc:
            return partial(str(exc), "numeric", mask)

    mask = render_mask(params, grid)
    return OptimizationResult(params=params, foreground=fg, mask=mask,
                              loss_trace=trace, snapshots=snapshots)
