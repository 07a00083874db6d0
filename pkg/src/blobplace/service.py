"""HTTP facade over the placement pipeline.

One endpoint per pipeline command, JSON in, JSON summary out. Failures are
reported as {"error": {"kind": ..., "message": ...}} where kind is one of
validation / transport / numeric; clients map kinds to exit codes. The
service reads and writes run directories on its own filesystem, so it is
meant to run next to the data it manages.
"""

from __future__ import annotations

import httpx
from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, ConfigDict

from . import __version__
from .errors import (
    NumericError,
    ProtocolError,
    TransportError,
    ValidationError,
    kind_for_exception,
)
from .pipeline import (
    cmd_hallucinate_scene,
    cmd_optimize,
    cmd_place,
    cmd_progression,
    cmd_sweep,
    default_config,
    manifest_from_dict,
)

KIND_STATUS = {"validation": 400, "transport": 502, "numeric": 500}


class ManifestModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

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
    threshold: float = 0.2
    dilate_kernel: int | None = None
    guidance_scale: float = 200.0
    lr_fg: float | None = None
    lr_blob: float = 0.1
    resolution: tuple[int, int] = (512, 512)
    snapshot_every: int = 100
    overlap_weight: float = 0.0
    frozen_masks: list[str] = []
    subject_token: str | None = None
    subject_mask: str | None = None
    target_image: str | None = None
    recovery_center: tuple[float, float] | None = None
    recovery_scale: float | None = None
    inpaint_steps: int = 30


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    axis: str
    values: list[float]
    manifest: ManifestModel


class ProgressionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_dir: str
    out: str | None = None


def _envelope(kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=KIND_STATUS[kind],
                        content={"error": {"kind": kind, "message": message}})


def create_app(diffusion_transport: httpx.BaseTransport | None = None
               ) -> FastAPI:
    """Build the engine app. `diffusion_transport`, when given, replaces
    the HTTP layer used to reach the diffusion service (tests run a fake
    in-process)."""
    app = FastAPI(title="blobplace engine", version=__version__)
    app.state.diffusion_transport = diffusion_transport

    @app.exception_handler(ValidationError)
    @app.exception_handler(ProtocolError)
    @app.exception_handler(TransportError)
    @app.exception_handler(NumericError)
    @app.exception_handler(ValueError)
    async def _pipeline_error(_, exc: Exception) -> JSONResponse:
        return _envelope(kind_for_exception(exc), str(exc))

    @app.exception_handler(RequestValidationError)
    async def _request_error(_, exc: RequestValidationError) -> JSONResponse:
        return _envelope("validation", str(exc))

    @app.get("/healthz", response_class=PlainTextResponse)
    async def healthz() -> str:
        return "ok"

    @app.get("/v1/defaults")
    def defaults() -> dict:
        return default_config()

    @app.post("/v1/optimize")
    def optimize(body: ManifestModel) -> dict:
        manifest = manifest_from_dict(body.model_dump())
        return cmd_optimize(manifest,
                            transport=app.state.diffusion_transport)

    @app.post("/v1/place")
    def place(body: ManifestModel) -> dict:
        manifest = manifest_from_dict(body.model_dump())
        return cmd_place(manifest, transport=app.state.diffusion_transport)

    @app.post("/v1/hallucinate-scene")
    def hallucinate(body: ManifestModel) -> dict:
        manifest = manifest_from_dict(body.model_dump())
        return cmd_hallucinate_scene(
            manifest, transport=app.state.diffusion_transport)

    @app.post("/v1/sweep")
    def sweep(body: SweepRequest) -> dict:
        manifest = manifest_from_dict(body.manifest.model_dump())
        values: list = list(body.values)
        if body.axis in ("blobs", "dilation"):
            values = [int(v) for v in values]
        return cmd_sweep(body.axis, values, manifest,
                         transport=app.state.diffusion_transport)

    @app.post("/v1/progression")
    def progression(body: ProgressionRequest) -> dict:
        return cmd_progression(body.run_dir, body.out)

    return app


app = create_app()
