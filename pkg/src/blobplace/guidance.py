"""Guidance oracles: the pluggable source of image-space loss gradients.

An oracle maps (composite image, step index, seed) to a gradient image of
the same shape plus an optional scalar loss. Two synthetic oracles make the
optimizer testable without any model; the remote oracle speaks the
/sds_grad wire protocol to a score-distillation service.

Determinism contract: identical (image, step_index, rng_seed) must yield
identical output. The remote service honors it by seeding its noise draw
from the request seed, which we derive as base_seed XOR step_index.
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import httpx
import numpy as np

from .compositing import composite
from .errors import ProtocolError, TransportError

DEFAULT_T_MIN = 0.02
DEFAULT_T_MAX = 0.98

# seconds slept between the initial attempt and each of the 3 retries
RETRY_BACKOFF = (0.5, 1.0, 2.0)

U64_MASK = (1 << 64) - 1


class GuidanceOracle(Protocol):
    def evaluate(self, image: np.ndarray, step_index: int,
                 rng_seed: int) -> tuple[np.ndarray, float | None]:
        ...


class TargetImageOracle:
    """loss = weight * mean((I - target)^2); grad is its exact derivative."""

    def __init__(self, target: np.ndarray, weight: float = 1.0):
        self.target = np.asarray(target, dtype=np.float64)
        self.weight = weight

    def evaluate(self, image: np.ndarray, step_index: int,
                 rng_seed: int) -> tuple[np.ndarray, float | None]:
        if image.shape != self.target.shape:
            raise ValueError(f"image shape {image.shape} != target shape "
                             f"{self.target.shape}")
        diff = image - self.target
        loss = self.weight * float(np.mean(diff * diff))
        grad = 2.0 * self.weight * diff / diff.size
        return grad, loss


def target_image_oracle(target: np.ndarray, weight: float = 1.0) -> TargetImageOracle:
    return TargetImageOracle(target, weight)


class MaskRecoveryOracle(TargetImageOracle):
    """Target built by compositing a known mask with a solid fill over the
    background; optimizing against it should recover the mask."""

    def __init__(self, target_mask: np.ndarray, bg: np.ndarray,
                 fill_color: np.ndarray, weight: float = 1.0):
        fill = np.broadcast_to(np.asarray(fill_color, dtype=np.float64), bg.shape)
        super().__init__(composite(target_mask, fill, bg), weight)
        self.target_mask = np.asarray(target_mask, dtype=np.float64)


def mask_recovery_oracle(target_mask: np.ndarray, bg: np.ndarray,
                         fill_color: np.ndarray) -> MaskRecoveryOracle:
    return MaskRecoveryOracle(target_mask, bg, fill_color)


@dataclass
class SdsRequest:
    prompt: str
    guidance_scale: float
    image: np.ndarray        # (H, W, 3) float32
    seed: int                # uint64
    t_min: float = DEFAULT_T_MIN
    t_max: float = DEFAULT_T_MAX

    def __post_init__(self):
        self.image = np.ascontiguousarray(self.image, dtype=np.float32)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {self.image.shape}")
        if not 0.0 < self.t_min < self.t_max < 1.0:
            raise ValueError(f"need 0 < t_min < t_max < 1, got "
                             f"[{self.t_min}, {self.t_max}]")
        self.seed = int(self.seed) & U64_MASK


@dataclass
class SdsResponse:
    grad: np.ndarray         # (H, W, 3) float32
    loss: float | None

    def __post_init__(self):
        self.grad = np.ascontiguousarray(self.grad, dtype=np.float32)


def encode_request(req: SdsRequest) -> bytes:
    h, w, _ = req.image.shape
    body = {
        "prompt": req.prompt,
        "guidance_scale": req.guidance_scale,
        "height": h,
        "width": w,
        "channels": 3,
        "layout": "HWC",
        "dtype": "f32le",
        "seed": req.seed,
        "t_min": req.t_min,
        "t_max": req.t_max,
        "image_b64": base64.b64encode(
            req.image.astype("<f4").tobytes(order="C")).decode("ascii"),
    }
    return json.dumps(body).encode("utf-8")


def decode_request(data: bytes) -> SdsRequest:
    try:
        body = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"request is not JSON: {exc}") from exc
    for key in ("prompt", "guidance_scale", "height", "width", "channels",
                "layout", "dtype", "seed", "t_min", "t_max", "image_b64"):
        if key not in body:
            raise ProtocolError(f"request missing field {key!r}")
    if body["layout"] != "HWC" or body["dtype"] != "f32le" or body["channels"] != 3:
        raise ProtocolError(
            f"unsupported tensor declaration: layout={body['layout']!r} "
            f"dtype={body['dtype']!r} channels={body['channels']!r}")
    h, w = int(body["height"]), int(body["width"])
    raw = base64.b64decode(body["image_b64"])
    expected = 4 * h * w * 3
    if len(raw) != expected:
        raise ProtocolError(f"image payload is {len(raw)} bytes, expected {expected}")
    image = np.frombuffer(raw, dtype="<f4").reshape(h, w, 3)
    return SdsRequest(prompt=body["prompt"],
                      guidance_scale=float(body["guidance_scale"]),
                      image=image, seed=int(body["seed"]),
                      t_min=float(body["t_min"]), t_max=float(body["t_max"]))


def encode_response(resp: SdsResponse) -> bytes:
    body = {
        "grad_b64": base64.b64encode(
            resp.grad.astype("<f4").tobytes(order="C")).decode("ascii"),
        "loss": resp.loss,
    }
    return json.dumps(body).encode("utf-8")


def decode_response(data: bytes, height: int, width: int) -> SdsResponse:
    try:
        body = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"response is not JSON: {exc}") from exc
    if "grad_b64" not in body:
        raise ProtocolError("response missing field 'grad_b64'")
    raw = base64.b64decode(body["grad_b64"])
    expected = 4 * height * width * 3
    if len(raw) != expected:
        raise ProtocolError(f"gradient payload is {len(raw)} bytes, "
                            f"expected {expected}")
    grad = np.frombuffer(raw, dtype="<f4").reshape(height, width, 3)
    loss = body.get("loss")
    if loss is not None and not isinstance(loss, (int, float)):
        raise ProtocolError(f"loss must be a number or null, got {type(loss).__name__}")
    return SdsResponse(grad=grad, loss=None if loss is None else float(loss))


class RemoteSdsOracle:
    """Client for the remote score-distillation endpoint.

    Transport failures retry 3 times with 0.5/1/2 s backoff, then raise
    TransportError. A response that cannot be decoded, or one whose
    gradient does not match the image shape, raises ProtocolError.
    `transport` and `sleep` exist so tests can fake the network and skip
    the real waits.
    """

    def __init__(self, endpoint_url: str, prompt: str, guidance_scale: float,
                 t_min: float = DEFAULT_T_MIN, t_max: float = DEFAULT_T_MAX,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 timeout: float = 60.0):
        self.url = endpoint_url.rstrip("/") + "/sds_grad"
        self.prompt = prompt
        self.guidance_scale = guidance_scale
        self.t_min = t_min
        self.t_max = t_max
        self._sleep = sleep
        self._client = httpx.Client(transport=transport, timeout=timeout)

    def evaluate(self, image: np.ndarray, step_index: int,
                 rng_seed: int) -> tuple[np.ndarray, float | None]:
        req = SdsRequest(prompt=self.prompt, guidance_scale=self.guidance_scale,
                         image=image.astype(np.float32),
                         seed=(int(rng_seed) ^ int(step_index)) & U64_MASK,
                         t_min=self.t_min, t_max=self.t_max)
        payload = encode_request(req)
        response = self._post_with_retries(payload)
        if response.status_code != 200:
            try:
                detail = response.json().get("error", "")
            except json.JSONDecodeError:
                detail = response.text[:200]
            raise ProtocolError(f"endpoint returned {response.status_code}: {detail}")
        h, w, _ = image.shape
        decoded = decode_response(response.content, h, w)
        return decoded.grad.astype(np.float64), decoded.loss

    def _post_with_retries(self, payload: bytes) -> httpx.Response:
        last: Exception | None = None
        for attempt in range(1 + len(RETRY_BACKOFF)):
            try:
                return self._client.post(
                    self.url, content=payload,
                    headers={"content-type": "application/json"})
            except httpx.TransportError as exc:
                last = exc
                if attempt < len(RETRY_BACKOFF):
                    self._sleep(RETRY_BACKOFF[attempt])
        raise TransportError(f"endpoint unreachable after "
                             f"{1 + len(RETRY_BACKOFF)} attempts: {last}")

    def close(self) -> None:
        self._client.close()


def remote_sds_oracle(endpoint_url: str, prompt: str, guidance_scale: float,
                      t_min: float = DEFAULT_T_MIN, t_max: float = DEFAULT_T_MAX,
                      **kwargs) -> RemoteSdsOracle:
    return RemoteSdsOracle(endpoint_url, prompt, guidance_scale, t_min, t_max,
                           **kwargs)
