"""Command-line client for the engine service.

By default each verb talks to an in-process copy of the engine app, so no
server needs to be running; pass --server to target a remote engine
instead. Exit codes: 0 success, 2 validation, 3 transport, 4 numeric.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from .errors import EXIT_TRANSPORT, EXIT_VALIDATION, exit_code_for_kind


class UsageError(Exception):
    """CLI-side validation failure; maps to exit code 2."""


class EngineClient:
    """Minimal sync facade over either a remote engine or the in-process
    ASGI app."""

    def __init__(self, server: str | None):
        self._server = server.rstrip("/") if server else None
        self._transport = None
        if self._server is None:
            from .service import create_app

            self._transport = httpx.ASGITransport(app=create_app())

    def post(self, path: str, body: dict) -> httpx.Response:
        return self._request("POST", path, body)

    def get(self, path: str) -> httpx.Response:
        return self._request("GET", path, None)

    def _request(self, method: str, path: str, body: dict | None
                 ) -> httpx.Response:
        if self._server is not None:
            with httpx.Client(base_url=self._server, timeout=None) as client:
                return client.request(method, path, json=body)
        return asyncio.run(self._asgi_request(method, path, body))

    async def _asgi_request(self, method: str, path: str, body: dict | None
                            ) -> httpx.Response:
        async with httpx.AsyncClient(transport=self._transport,
                                     base_url="http://engine",
                                     timeout=None) as client:
            return await client.request(method, path, json=body)


MANIFEST_KEYS = (
    "background", "prompt", "out_dir", "seed", "oracle", "endpoint",
    "iterations", "blobs", "scale", "aspect", "spacing", "sharpness",
    "threshold", "dilate_kernel", "guidance_scale", "lr_fg", "lr_blob",
    "resolution", "snapshot_every", "overlap_weight", "frozen_masks",
    "subject_token", "subject_mask", "target_image", "recovery_center",
    "recovery_scale", "inpaint_steps",
)


def _add_manifest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="JSON manifest; explicit flags override its fields")
    p.add_argument("--background", help="background image (PNG/JPEG)")
    p.add_argument("--prompt", help="placement or scene prompt")
    p.add_argument("--out", dest="out_dir", help="run output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", dest="iterations", type=int)
    p.add_argument("--blobs", type=int, help="number of chained blobs")
    p.add_argument("--scale", type=float, help="blob scale s")
    p.add_argument("--aspect", type=float, help="blob aspect ratio a")
    p.add_argument("--spacing", type=float, help="chain spacing r")
    p.add_argument("--sharpness", type=float, help="covariance gain c")
    p.add_argument("--threshold", type=float, help="binarization threshold")
    p.add_argument("--dilate", dest="dilate_kernel", type=int,
                   help="odd dilation kernel; default scales with resolution")
    p.add_argument("--oracle",
                   choices=["mock-target", "mock-recovery", "remote"])
    p.add_argument("--endpoint", help="diffusion service base URL")
    p.add_argument("--guidance-scale", dest="guidance_scale", type=float)
    p.add_argument("--frozen-mask", dest="frozen_masks", action="append",
                   metavar="PNG", help="binary mask to avoid; repeatable")
    p.add_argument("--overlap-weight", dest="overlap_weight", type=float)
    p.add_argument("--resolution", help="training resolution as WxH")
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    p.add_argument("--lr-fg", dest="lr_fg", type=float)
    p.add_argument("--lr-blob", dest="lr_blob", type=float)
    p.add_argument("--subject-token", dest="subject_token",
                   help="personalized subject token for the inpaint prompt")
    p.add_argument("--subject-mask", dest="subject_mask",
                   help="binary subject mask PNG (hallucinate-scene)")
    p.add_argument("--target-image", dest="target_image",
                   help="target for the mock-target oracle")
    p.add_argument("--recovery-center", dest="recovery_center",
                   metavar="X,Y", help="pin the mock-recovery target center")
    p.add_argument("--recovery-scale", dest="recovery_scale", type=float)
    p.add_argument("--inpaint-steps", dest="inpaint_steps", type=int)


def _build_manifest(args: argparse.Namespace) -> dict:
    doc: dict = {}
    if args.config:
        with open(args.config) as fh:
            doc.update(json.load(fh))
    for key in MANIFEST_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if isinstance(doc.get("resolution"), str):
        w, _, h = doc["resolution"].partition("x")
        doc["resolution"] = [int(w), int(h)]
    if isinstance(doc.get("recovery_center"), str):
        x, _, y = doc["recovery_center"].partition(",")
        doc["recovery_center"] = [float(x), float(y)]
    missing = [k for k in ("background", "prompt", "out_dir") if not doc.get(k)]
    if missing:
        flags = ", ".join("--" + k.replace("out_dir", "out") for k in missing)
        raise UsageError(f"missing required options: {flags}")
    return doc


def _print_summary(doc: dict) -> None:
    order = ["run_dir", "iterations_completed", "final_loss",
             "mask_area_fraction", "iou_vs_target", "dilate_kernel",
             "placed", "inpaint_prompt", "scene", "repaint_area_fraction",
             "csv", "sheet"]
    labels = {"run_dir": "run dir", "iterations_completed": "iterations",
              "final_loss": "final loss",
              "mask_area_fraction": "mask area fraction",
              "iou_vs_target": "final IoU", "dilate_kernel": "dilate kernel",
              "placed": "placed image", "inpaint_prompt": "inpaint prompt",
              "scene": "scene image",
              "repaint_area_fraction": "repaint area fraction",
              "csv": "sweep csv", "sheet": "contact sheet"}
    for key in order:
        if key in doc and doc[key] is not None:
            value = doc[key]
            if isinstance(value, float):
                value = f"{value:.6g}"
            print(f"{labels[key]}: {value}")
    for row in doc.get("rows", []):
        area = row["mask_area_fraction"]
        extra = ""
        if row.get("iou_vs_target") is not None:
            extra = f"  iou={row['iou_vs_target']:.4f}"
        print(f"  {row['axis']}={row['value']}  area={area:.4f}{extra}")


def _dispatch(client: EngineClient, path: str, body: dict) -> int:
    try:
        resp = client.post(path, body)
    except httpx.TransportError as exc:
        print(f"engine unreachable: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    if resp.status_code == 200:
        _print_summary(resp.json())
        return 0
    try:
        err = resp.json()["error"]
        kind, message = err["kind"], err["message"]
    except (json.JSONDecodeError, KeyError):
        kind, message = "validation", resp.text[:500]
    print(f"error ({kind}): {message}", file=sys.stderr)
    return exit_code_for_kind(kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blobplace",
        description="Optimize semantic placement masks and drive "
                    "subject-conditioned inpainting.")
    parser.add_argument("--server", metavar="URL",
                        help="remote engine service; default runs in-process")
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb, help_text in (
            ("optimize", "optimize a placement mask and write the run dir"),
            ("place", "optimize, then inpaint the subject into the mask"),
            ("hallucinate-scene",
             "repaint everything around a fixed subject mask")):
        p = sub.add_parser(verb, help=help_text)
        _add_manifest_flags(p)

    p = sub.add_parser("sweep", help="run an ablation sweep along one axis")
    p.add_argument("--axis", required=True,
                   choices=["scale", "blobs", "dilation"])
    p.add_argument("--values", required=True,
                   help="comma-separated values for the axis")
    _add_manifest_flags(p)

    p = sub.add_parser("progression",
                       help="tile snapshot masks/composites into one sheet")
    p.add_argument("--run", required=True, help="existing run directory")
    p.add_argument("--out", help="output sheet path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    client = EngineClient(args.server)
    try:
        if args.verb == "progression":
            return _dispatch(client, "/v1/progression",
                             {"run_dir": args.run, "out": args.out})
        if args.verb == "sweep":
            manifest = _build_manifest(args)
            values = [float(v) for v in args.values.split(",") if v != ""]
            return _dispatch(client, "/v1/sweep",
                             {"axis": args.axis, "values": values,
                              "manifest": manifest})
        manifest = _build_manifest(args)
        path = {"optimize": "/v1/optimize", "place": "/v1/place",
                "hallucinate-scene": "/v1/hallucinate-scene"}[args.verb]
        return _dispatch(client, path, manifest)
    except UsageError as exc:
        print(f"error (validation): {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
