"""End-to-end checks against a live diffusion service process. These run the
engine's own HTTP clients (no mock transports) over a loopback socket."""

import base64
import json
import os
from pathlib import Path

import httpx
import numpy as np

from blobplace import assets, guidance
from blobplace.pipeline import RunManifest, _post_inpaint, cmd_place
from blobplace.renderer import to_u8

VECTORS_PATH = Path(__file__).resolve().parent.parent / "protocol" / "vectors.json"


def test_sds_grad_deterministic_over_http(diffusion_service):
    oracle = guidance.remote_sds_oracle(diffusion_service,
                                        "a person on a bench", 200.0)
    rng = np.random.default_rng(11)
    image = rng.random((8, 8, 3))
    try:
        grad_a, loss_a = oracle.evaluate(image, step_index=3, rng_seed=12345)
        grad_b, loss_b = oracle.evaluate(image, step_index=3, rng_seed=12345)
        grad_c, _ = oracle.evaluate(image, step_index=4, rng_seed=12345)
    finally:
        oracle.close()
    np.testing.assert_array_equal(grad_a, grad_b)
    assert grad_a.shape == (8, 8, 3)
    assert loss_a is None and loss_b is None
    assert not np.array_equal(grad_a, grad_c)


def test_inpaint_vector_over_http(diffusion_service):
    vec = json.loads(VECTORS_PATH.read_text(encoding="utf-8"))["inpaint"]
    image_u8 = np.array(vec["image_bytes"], dtype=np.uint8).reshape(4, 4, 3)
    mask = np.array(vec["mask_bytes"], dtype=np.uint8).reshape(4, 4) >= 128
    painted = _post_inpaint(diffusion_service, image_u8 / 255.0, mask,
                            vec["prompt"], vec["seed"], vec["steps"])
    painted_u8 = to_u8(painted)
    np.testing.assert_array_equal(painted_u8[~mask], image_u8[~mask])
    assert (painted_u8[mask] != image_u8[mask]).any()


def test_subject_token_place_flow(diffusion_service, tmp_path):
    """Register a token from three subject crops, then place with it; the
    service must accept the token-bearing prompt."""
    token = f"sks-subject-{os.getpid()}"
    crops = [base64.b64encode(bytes([fill] * 48)).decode("ascii")
             for fill in (10, 20, 30)]
    resp = httpx.post(diffusion_service + "/invert",
                      json={"token_id": token, "subject_images": crops})
    assert resp.status_code == 200
    assert resp.json()["token_id"] == token

    manifest = RunManifest(background=assets.path("room.png"),
                           prompt="sitting on a sofa",
                           out_dir=str(tmp_path / "run"),
                           seed=7,
                           oracle="remote",
                           endpoint=diffusion_service,
                           iterations=15,
                           resolution=(64, 64),
                           snapshot_every=15,
                           inpaint_steps=5,
                           subject_token=token)
    summary = cmd_place(manifest)
    assert summary["inpaint_prompt"] == f"a {token} sitting on a sofa"
    assert os.path.exists(summary["placed"])
