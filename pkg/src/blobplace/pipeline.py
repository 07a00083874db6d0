"""Run orchestration: single optimizations, full placement against the
inpainting service, scene hallucination, ablation sweeps, progression sheets.

Every command takes a RunManifest, writes its artifacts under the manifest's
output directory, and returns a JSON-friendly summary dict. Backgrounds are
letterboxed to the training resolution (edge-replicate padding) and masks
are mapped back to the source resolution by nearest neighbour on export.
"""

from __future__ import annotations

import base64
import csv
import json
import os
from dataclasses import dataclass, field, replace

import httpx
import numpy as np
from PIL import Image

from .compositing import composite, load_image, save_image
from .errors import NumericError, ProtocolError, TransportError, ValidationError
from .geometry import BlobParams, canonicalize_theta
from .guidance import (
    GuidanceOracle,
    mask_recovery_oracle,
    remote_sds_oracle,
    target_image_oracle,
)
from .optim import TrainConfig, default_blob_params, run_optimization
from .postprocess import (
    DEFAULT_THRESHOLD,
    binarize,
    dilate,
    iou,
    load_binary_png,
    mask_area_fraction,
    save_binary_png,
    scaled_kernel,
)
from .renderer import GridSpec, dump_mask, render_mask, save_mask_png, to_u8

RECOVERY_FILL = np.array([0.9, 0.85, 0.1])
# foreground rate for the synthetic recovery oracle; the standard 0.2
# lets the free foreground absorb mask misplacement on an MSE target
RECOVERY_LR_FG = 0.01
BLOB_SWEEP_SCALES = {1: 3.0, 3: 1.0, 5: 0.6, 7: 0.43}

ORACLES = ("mock-target", "mock-recovery", "remote")


@dataclass
class RunManifest:
    background: str
    prompt: str
    out_dir: str
    seed: int = 0
    oracle: str = "mock-recovery"
    endpoint: str | None = None
    iterations: int = 1000
    blobs: int = 5
    scale: float = 0.6
    aspect: float = 2.0
    spacing: float = 0.01
    sharpness: float = 0.02
    threshold: float = DEFAULT_THRESHOLD
    dilate_kernel: int | None = None       # None: scale 15@512 to resolution
    guidance_scale: float = 200.0
    lr_fg: float | None = None             # None: 0.2, or 0.01 under mock-recovery
    lr_blob: float = 0.1
    resolution: tuple[int, int] = (512, 512)
    snapshot_every: int = 100
    overlap_weight: float = 0.0
    frozen_masks: list[str] = field(default_factory=list)
    subject_token: str | None = None
    subject_mask: str | None = None        # for scene hallucination
    target_image: str | None = None        # mock-target oracle target
    recovery_center: tuple[float, float] | None = None
    recovery_scale: float | None = None    # target scale for mock-recovery
    inpaint_steps: int = 30

    def __post_init__(self):
        if not self.prompt:
            raise ValidationError("prompt must be non-empty")
        if self.oracle not in ORACLES:
            raise ValidationError(f"unknown oracle {self.oracle!r}, "
                                  f"expected one of {ORACLES}")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got "
                                  f"{self.iterations}")
        if not os.path.isfile(self.background):
            raise ValidationError(f"background not found: {self.background}")

    def effective_lr_fg(self) -> float:
        if self.lr_fg is not None:
            return self.lr_fg
        return RECOVERY_LR_FG if self.oracle == "mock-recovery" else 0.2


def manifest_from_dict(doc: dict) -> RunManifest:
    known = {f.name for f in RunManifest.__dataclass_fields__.values()}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"unknown manifest fields: {sorted(unknown)}")
    doc = dict(doc)
    if "resolution" in doc:
        doc["resolution"] = tuple(doc["resolution"])
    if "recovery_center" in doc and doc["recovery_center"] is not None:
        doc["recovery_center"] = tuple(doc["recovery_center"])
    try:
        return RunManifest(**doc)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def default_config() -> dict:
    """The full default configuration as one serializable document."""
    cfg = TrainConfig()
    blob = default_blob_params()
    return {
        "iterations": cfg.iterations,
        "guidance_scale": cfg.guidance_scale,
        "lr_fg": cfg.lr_fg,
        "lr_blob": cfg.lr_blob,
        "betas": list(cfg.betas),
        "eps": cfg.eps,
        "weight_decay": cfg.weight_decay,
        "resolution": list(cfg.resolution),
        "snapshot_every": cfg.snapshot_every,
        "blobs": blob.k,
        "scale": blob.s,
        "aspect": blob.a,
        "spacing": blob.r,
        "sharpness": blob.c,
        "threshold": DEFAULT_THRESHOLD,
        "dilate_kernel": scaled_kernel(*cfg.resolution),
        "t_min": 0.02,
        "t_max": 0.98,
    }


def letterbox(image: np.ndarray, width: int, height: int
              ) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Aspect-preserving fit of image into (width, height) with
    edge-replicate padding. Returns (padded, (x0, y0, w, h)) where the box
    is the region the source occupies inside the padded frame."""
    h0, w0 = image.shape[:2]
    scale = min(width / w0, height / h0)
    w1 = max(1, round(w0 * scale))
    h1 = max(1, round(h0 * scale))
    if (w1, h1) != (w0, h0):
        pil = Image.fromarray(to_u8(image), mode="RGB")
        resized = np.asarray(pil.resize((w1, h1), Image.BILINEAR),
                             dtype=np.float64) / 255.0
    else:
        resized = image
    x0 = (width - w1) // 2
    y0 = (height - h1) // 2
    padded = np.pad(resized, ((y0, height - h1 - y0), (x0, width - w1 - x0),
                              (0, 0)), mode="edge")
    return padded, (x0, y0, w1, h1)


def unletterbox_mask(mask: np.ndarray, box: tuple[int, int, int, int],
                     out_w: int, out_h: int) -> np.ndarray:
    """Crop the letterbox region and map to the source resolution by
    nearest neighbour."""
    x0, y0, w1, h1 = box
    crop = mask[y0:y0 + h1, x0:x0 + w1]
    iy = np.minimum((np.arange(out_h) + 0.5) * h1 / out_h, h1 - 1).astype(int)
    ix = np.minimum((np.arange(out_w) + 0.5) * w1 / out_w, w1 - 1).astype(int)
    return crop[np.ix_(iy, ix)]


def _recovery_setup(manifest: RunManifest, bg: np.ndarray,
                    grid: GridSpec) -> tuple[GuidanceOracle, BlobParams,
                                             np.ndarray]:
    """Synthetic recovery harness: a seeded target placement plus a
    perturbed initialization (offset 0.1 in a random direction, angle noise
    sigma 0.3 rad)."""
    rng = np.random.default_rng(manifest.seed)
    target = default_blob_params(k=manifest.blobs,
                                 s=manifest.recovery_scale or manifest.scale,
                                 a=manifest.aspect, r=manifest.spacing,
                                 c=manifest.sharpness)
    if manifest.recovery_center is not None:
        target.x1 = np.array(manifest.recovery_center, dtype=np.float64)
    else:
        target.x1 = np.array([0.5, 0.5]) + rng.uniform(-0.05, 0.05, 2)
    target_mask = render_mask(target, grid)
    oracle = mask_recovery_oracle(target_mask, bg, RECOVERY_FILL)

    init = default_blob_params(k=manifest.blobs, s=manifest.scale,
                               a=manifest.aspect, r=manifest.spacing,
                               c=manifest.sharpness)
    direction = rng.standard_normal(2)
    direction /= np.linalg.norm(direction)
    init.x1 = target.x1 + 0.1 * direction
    init.theta = target.theta + rng.normal(0, 0.3, manifest.blobs)
    init.alpha = target.alpha + rng.normal(0, 0.3, max(manifest.blobs - 1, 0))
    return oracle, init, target_mask


def _build_oracle(manifest: RunManifest, bg: np.ndarray, grid: GridSpec,
                  transport: httpx.BaseTransport | None = None
                  ) -> tuple[GuidanceOracle, BlobParams, np.ndarray | None]:
    if manifest.oracle == "mock-recovery":
        return _recovery_setup(manifest, bg, grid)
    init = default_blob_params(k=manifest.blobs, s=manifest.scale,
                               a=manifest.aspect, r=manifest.spacing,
                               c=manifest.sharpness)
    if manifest.oracle == "mock-target":
        if manifest.target_image is not None:
            target, _ = letterbox(load_image(manifest.target_image),
                                  grid.width, grid.height)
        else:
            target = bg.copy()
        return target_image_oracle(target), init, None
    if manifest.endpoint is None:
        raise ValidationError("remote oracle requires an endpoint")
    oracle = remote_sds_oracle(manifest.endpoint, manifest.prompt,
                               manifest.guidance_scale, transport=transport)
    return oracle, init, None


def _write_trace(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr_blob", "lr_fg", "loss"])
        for step, lr_b, lr_f, loss in rows:
            writer.writerow([step, repr(lr_b), repr(lr_f),
                             "" if loss is None else repr(loss)])


def cmd_optimize(manifest: RunManifest, *,
                 transport: httpx.BaseTransport | None = None) -> dict:
    """Optimize the mask, post-process it, and write the run directory.

    Artifacts: config.json, trace.csv, snapshot PNGs, params.json,
    mask_soft.{mskf,png}, mask_binary.png (plus a source-resolution copy
    when the background was letterboxed), composite/foreground PNGs, and
    summary.json. Oracle aborts still persist partial artifacts, then
    raise so the caller can map the failure to an exit code.

    `transport` replaces the HTTP layer for the remote oracle; tests use
    it to run against an in-process fake.
    """
    w, h = manifest.resolution
    grid = GridSpec(w, h)
    source = load_image(manifest.background)
    bg, box = letterbox(source, w, h)

    oracle, init, target_mask = _build_oracle(manifest, bg, grid, transport)
    frozen = [load_binary_png(p).astype(np.float64)
              for p in manifest.frozen_masks]
    for i, f in enumerate(frozen):
        if f.shape != (h, w):
            raise ValidationError(f"frozen mask {manifest.frozen_masks[i]} is "
                                  f"{f.shape[1]}x{f.shape[0]}, expected {w}x{h}")
    cfg = TrainConfig(iterations=manifest.iterations,
                      lr_fg=manifest.effective_lr_fg(),
                      lr_blob=manifest.lr_blob,
                      guidance_scale=manifest.guidance_scale,
                      resolution=(w, h),
                      snapshot_every=manifest.snapshot_every,
                      base_seed=manifest.seed,
                      overlap_weight=manifest.overlap_weight,
                      frozen_masks=frozen)

    os.makedirs(manifest.out_dir, exist_ok=True)
    config_echo = {"manifest": _manifest_doc(manifest),
                   "defaults": default_config()}
    with open(os.path.join(manifest.out_dir, "config.json"), "w") as fh:
        json.dump(config_echo, fh, indent=2)

    result = run_optimization(bg, init, oracle, cfg)

    _write_trace(os.path.join(manifest.out_dir, "trace.csv"), result.loss_trace)
    for step, mask, comp in result.snapshots:
        save_mask_png(mask, os.path.join(manifest.out_dir,
                                         f"step_{step}_mask.png"))
        save_image(comp, os.path.join(manifest.out_dir,
                                      f"step_{step}_composite.png"))
    with open(os.path.join(manifest.out_dir, "params.json"), "w") as fh:
        fh.write(result.params.to_json())

    kernel = manifest.dilate_kernel
    if kernel is None:
        kernel = scaled_kernel(w, h)
    binary = dilate(binarize(result.mask, manifest.threshold), kernel)
    dump_mask(result.mask, os.path.join(manifest.out_dir, "mask_soft.mskf"))
    save_mask_png(result.mask, os.path.join(manifest.out_dir, "mask_soft.png"))
    save_binary_png(binary, os.path.join(manifest.out_dir, "mask_binary.png"))
    h0, w0 = source.shape[:2]
    if (w0, h0) != (w, h):
        save_binary_png(unletterbox_mask(binary, box, w0, h0),
                        os.path.join(manifest.out_dir,
                                     "mask_binary_source_res.png"))
    save_image(result.foreground, os.path.join(manifest.out_dir,
                                               "foreground_final.png"))
    save_image(composite(result.mask, result.foreground, bg),
               os.path.join(manifest.out_dir, "composite_final.png"))

    losses = [row[3] for row in result.loss_trace if row[3] is not None]
    summary = {
        "run_dir": manifest.out_dir,
        "iterations_completed": len(result.loss_trace),
        "final_loss": losses[-1] if losses else None,
        "mask_area_fraction": mask_area_fraction(binary),
        "dilate_kernel": kernel,
        "theta_canonical": [float(t) for t in
                            canonicalize_theta(result.params.theta)],
        "aborted": result.aborted,
        "abort_kind": result.abort_kind,
    }
    if target_mask is not None:
        summary["iou_vs_target"] = iou(binary,
                                       binarize(target_mask,
                                                manifest.threshold))
    with open(os.path.join(manifest.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)

    if result.aborted is not None:
        exc = {"transport": TransportError,
               "numeric": NumericError}.get(result.abort_kind, ValidationError)
        raise exc(f"{result.aborted} (partial artifacts in "
                  f"{manifest.out_dir})")
    return summary


def _manifest_doc(manifest: RunManifest) -> dict:
    doc = {}
    for name in RunManifest.__dataclass_fields__:
        value = getattr(manifest, name)
        if isinstance(value, tuple):
            value = list(value)
        doc[name] = value
    return doc


def _post_inpaint(endpoint: str, image: np.ndarray, mask: np.ndarray,
                  prompt: str, seed: int, steps: int,
                  transport: httpx.BaseTransport | None = None) -> np.ndarray:
    """Send a u8 image + 0/255 mask to /inpaint, return the repainted image."""
    h, w = mask.shape
    body = {
        "height": h,
        "width": w,
        "image_b64": base64.b64encode(to_u8(image).tobytes()).decode("ascii"),
        "mask_b64": base64.b64encode(
            np.where(mask, 255, 0).astype(np.uint8).tobytes()).decode("ascii"),
        "prompt": prompt,
        "seed": int(seed),
        "steps": int(steps),
    }
    try:
        with httpx.Client(transport=transport, timeout=300.0) as client:
            resp = client.post(endpoint.rstrip("/") + "/inpaint", json=body)
    except httpx.TransportError as exc:
        raise TransportError(f"inpaint service unreachable: {exc}") from exc
    if resp.status_code != 200:
        try:
            detail = resp.json().get("error", "")
        except json.JSONDecodeError:
            detail = resp.text[:200]
        raise ProtocolError(f"inpaint returned {resp.status_code}: {detail}")
    payload = resp.json()
    if "image_b64" not in payload:
        raise ProtocolError("inpaint response missing 'image_b64'")
    raw = base64.b64decode(payload["image_b64"])
    if len(raw) != h * w * 3:
        raise ProtocolError(f"inpaint image payload is {len(raw)} bytes, "
                            f"expected {h * w * 3}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3) / 255.0


def cmd_place(manifest: RunManifest, *,
              transport: httpx.BaseTransport | None = None) -> dict:
    """Optimize, post-process, then repaint the masked region through the
    inpainting service. The input background file is never modified."""
    if manifest.endpoint is None:
        raise ValidationError("place requires an inpainting endpoint")
    summary = cmd_optimize(manifest, transport=transport)
    mask = load_binary_png(os.path.join(manifest.out_dir, "mask_binary.png"))
    if not mask.any():
        raise ValidationError("empty mask: nothing to inpaint")
    w, h = manifest.resolution
    bg, _ = letterbox(load_image(manifest.background), w, h)
    prompt = manifest.prompt
    if manifest.subject_token:
        prompt = f"a {manifest.subject_token} {manifest.prompt}"
    placed = _post_inpaint(manifest.endpoint, bg, mask, prompt,
                           manifest.seed, manifest.inpaint_steps, transport)
    placed_path = os.path.join(manifest.out_dir, "placed.png")
    save_image(placed, placed_path)
    summary.update({"placed": placed_path, "inpaint_prompt": prompt})
    return summary


def cmd_hallucinate_scene(manifest: RunManifest, *,
                          transport: httpx.BaseTransport | None = None) -> dict:
    """Outpaint everything around the subject: send the complement of the
    (dilated) subject mask to the inpainting service with the scene prompt."""
    if manifest.endpoint is None:
        raise ValidationError("hallucinate-scene requires an inpainting "
                              "endpoint")
    if manifest.subject_mask is None:
        raise ValidationError("hallucinate-scene requires a subject mask")
    mask = load_binary_png(manifest.subject_mask)
    if not mask.any():
        raise ValidationError("subject mask is empty")
    if mask.all():
        raise ValidationError("subject mask covers the full image; nothing "
                              "to hallucinate")
    w, h = manifest.resolution
    if mask.shape != (h, w):
        raise ValidationError(f"subject mask is {mask.shape[1]}x{mask.shape[0]}, "
                              f"expected {w}x{h}")
    kernel = manifest.dilate_kernel
    if kernel is None:
        kernel = scaled_kernel(w, h)
    repaint = ~dilate(mask, kernel)
    bg, _ = letterbox(load_image(manifest.background), w, h)
    out = _post_inpaint(manifest.endpoint, bg, repaint, manifest.prompt,
                        manifest.seed, manifest.inpaint_steps, transport)
    os.makedirs(manifest.out_dir, exist_ok=True)
    out_path = os.path.join(manifest.out_dir, "scene.png")
    save_image(out, out_path)
    return {"scene": out_path,
            "repaint_area_fraction": mask_area_fraction(repaint)}


SWEEP_AXES = ("scale", "blobs", "dilation")


def cmd_sweep(axis: str, values: list, manifest: RunManifest, *,
              transport: httpx.BaseTransport | None = None) -> dict:
    """One optimization per value along the chosen axis; emits sweep.csv
    and a contact sheet of the final binary masks."""
    if axis not in SWEEP_AXES:
        raise ValidationError(f"unknown sweep axis {axis!r}, expected one of "
                              f"{SWEEP_AXES}")
    if not values:
        raise ValidationError("sweep needs at least one value")
    if axis == "blobs":
        for v in values:
            if int(v) not in BLOB_SWEEP_SCALES:
                raise ValidationError(
                    f"blob sweep supports k in {sorted(BLOB_SWEEP_SCALES)}, "
                    f"got {v}")
    if axis == "dilation":
        for v in values:
            if int(v) < 1 or int(v) % 2 == 0:
                raise ValidationError(f"dilation kernels must be odd, got {v}")

    os.makedirs(manifest.out_dir, exist_ok=True)
    rows = []
    mask_paths = []
    for value in values:
        sub = replace(manifest,
                      out_dir=os.path.join(manifest.out_dir,
                                           f"{axis}_{value}"))
        if axis == "scale":
            sub = replace(sub, scale=float(value))
        elif axis == "blobs":
            k = int(value)
            sub = replace(sub, blobs=k, scale=BLOB_SWEEP_SCALES[k])
        else:
            sub = replace(sub, dilate_kernel=int(value))
        summary = cmd_optimize(sub, transport=transport)
        row = {"axis": axis, "value": value,
               "mask_area_fraction": summary["mask_area_fraction"],
               "final_loss": summary["final_loss"],
               "iou_vs_target": summary.get("iou_vs_target")}
        rows.append(row)
        mask_paths.append(os.path.join(sub.out_dir, "mask_binary.png"))

    csv_path = os.path.join(manifest.out_dir, "sweep.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["axis", "value",
                                                "mask_area_fraction",
                                                "final_loss", "iou_vs_target"])
        writer.writeheader()
        writer.writerows(rows)

    sheet_path = os.path.join(manifest.out_dir, "sweep_sheet.png")
    tiles = [np.asarray(Image.open(p).convert("L")) for p in mask_paths]
    _write_strip(tiles, sheet_path)
    return {"csv": csv_path, "sheet": sheet_path, "rows": rows}


def _write_strip(tiles: list[np.ndarray], path: str, pad: int = 2) -> None:
    h = max(t.shape[0] for t in tiles)
    widths = [t.shape[1] for t in tiles]
    strip = np.full((h, sum(widths) + pad * (len(tiles) - 1)), 64,
                    dtype=np.uint8)
    x = 0
    for t in tiles:
        strip[: t.shape[0], x:x + t.shape[1]] = t
        x += t.shape[1] + pad
    Image.fromarray(strip, mode="L").save(path, format="PNG")


def cmd_progression(run_dir: str, out_path: str | None = None) -> dict:
    """Tile (mask, composite) snapshot pairs chronologically: masks on the
    top row, composites below, one column per captured step."""
    if not os.path.isdir(run_dir):
        raise ValidationError(f"run directory not found: {run_dir}")
    steps = []
    for name in os.listdir(run_dir):
        if name.startswith("step_") and name.endswith("_mask.png"):
            steps.append(int(name.split("_")[1]))
    if not steps:
        raise ValidationError(f"no snapshots in {run_dir}")
    steps.sort()
    masks = []
    comps = []
    for step in steps:
        mask = Image.open(os.path.join(run_dir, f"step_{step}_mask.png"))
        comp = Image.open(os.path.join(run_dir, f"step_{step}_composite.png"))
        masks.append(np.asarray(mask.convert("RGB")))
        comps.append(np.asarray(comp.convert("RGB")))
    pad = 2
    th, tw = masks[0].shape[:2]
    n = len(steps)
    sheet = np.full((2 * th + pad, n * tw + pad * (n - 1), 3), 64,
                    dtype=np.uint8)
    for i in range(n):
        x = i * (tw + pad)
        sheet[:th, x:x + tw] = masks[i]
        sheet[th + pad:, x:x + tw] = comps[i]
    if out_path is None:
        out_path = os.path.join(run_dir, "progression.png")
    Image.fromarray(sheet, mode="RGB").save(out_path, format="PNG")
    return {"sheet": out_path, "steps": steps, "grid": [2, n]}
