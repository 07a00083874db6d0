#!/usr/bin/env python
"""Regenerate the shared wire-protocol vectors in protocol/vectors.json.

The vectors pin the exact bytes both sides of the wire must produce and
accept: the engine's pytest suite and the diffusion service's vitest suite
assert against the same committed file. Rerun deliberately after a codec
change and review the diff:

    python scripts/make_protocol_vectors.py
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import httpx
import numpy as np

from blobplace import guidance
from blobplace.pipeline import _post_inpaint

ROOT = Path(__file__).resolve().parent.parent

# Values chosen to be awkward for a sloppy codec: signed, subnormal-adjacent,
# decimals that are not exact in binary (0.1 is 0.10000000149011612 as f32).
SDS_PIXELS = [0.0, 1.0, -1.0, 0.5, 0.25, 0.1,
              1.0 / 3.0, 3.14159265, 1e-7, -2.5e-3, 0.875, 65504.0]
SDS_GRAD = [-0.125, 0.0625, 1e-6, -3.5, 0.2, -0.7,
            42.0, -1e-5, 0.333, 7.25, -0.001, 0.999]

# Above 2^53, so any decoder that routes the seed through a double mangles it.
BIG_SEED = 0x123456789ABCDEF0


def sds_vectors() -> dict:
    image = np.array(SDS_PIXELS, dtype=np.float32).reshape(2, 2, 3)
    request = guidance.SdsRequest(prompt="A person sitting on a sofa",
                                  guidance_scale=200.0,
                                  image=image,
                                  seed=BIG_SEED,
                                  t_min=0.02, t_max=0.98)
    grad = np.array(SDS_GRAD, dtype=np.float32).reshape(2, 2, 3)
    return {
        "height": 2,
        "width": 2,
        "seed_str": str(BIG_SEED),
        "image_f32": image.astype(np.float64).ravel().tolist(),
        "grad_f32": grad.astype(np.float64).ravel().tolist(),
        "loss": 0.125,
        "request_json": guidance.encode_request(request).decode("utf-8"),
        "response_json": guidance.encode_response(
            guidance.SdsResponse(grad=grad, loss=0.125)).decode("utf-8"),
        "response_json_null_loss": guidance.encode_response(
            guidance.SdsResponse(grad=grad, loss=None)).decode("utf-8"),
    }


def inpaint_vector() -> dict:
    """Capture the exact bytes cmd_place's helper puts on the wire."""
    image_u8 = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 1] = True
    mask[2, 1:3] = True

    captured: dict[str, bytes] = {}

    def handler(request: httpx.Request) -> httpx.Response:
        captured["content"] = request.content
        return httpx.Response(200, json={
            "image_b64": base64.b64encode(image_u8.tobytes()).decode("ascii"),
        })

    _post_inpaint("http://vector", image_u8 / 255.0, mask,
                  "warm lamp light", 7, 3,
                  transport=httpx.MockTransport(handler))
    return {
        "height": 4,
        "width": 4,
        "image_bytes": image_u8.ravel().tolist(),
        "mask_bytes": np.where(mask, 255, 0).astype(np.uint8).ravel().tolist(),
        "prompt": "warm lamp light",
        "seed": 7,
        "steps": 3,
        "request_json": captured["content"].decode("utf-8"),
    }


def main() -> None:
    vectors = {
        "sds": sds_vectors(),
        "inpaint": inpaint_vector(),
        "error_json": json.dumps({"error": "empty mask"}),
    }
    out = ROOT / "protocol" / "vectors.json"
    out.parent.mkdir(exist_ok=True)
    out.write_text(json.dumps(vectors, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
