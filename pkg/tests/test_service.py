import json

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient

from blobplace.cli import main
from blobplace.pipeline import default_config
from blobplace.service import create_app

from .test_pipeline import magenta_inpaint_transport, write_background


@pytest.fixture
def bg_path(tmp_path):
    return write_background(tmp_path / "bg.png")


@pytest.fixture
def client():
    return TestClient(create_app())


def manifest_body(bg_path, tmp_path, **over):
    body = {"background": bg_path, "prompt": "A person sitting there",
            "out_dir": str(tmp_path / "run"), "oracle": "mock-recovery",
            "iterations": 15, "resolution": [32, 32], "snapshot_every": 10,
            "seed": 3}
    body.update(over)
    return body


class TestServiceEndpoints:
    def test_healthz(self, client):
        resp = client.get("/healthz")
        assert resp.status_code == 200
        assert resp.text == "ok"

    def test_defaults_endpoint(self, client):
        resp = client.get("/v1/defaults")
        assert resp.status_code == 200
        assert resp.json() == default_config()

    def test_optimize_happy_path(self, client, bg_path, tmp_path):
        resp = client.post("/v1/optimize",
                           json=manifest_body(bg_path, tmp_path))
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["iterations_completed"] == 15
        assert doc["aborted"] is None
        assert 0.0 < doc["iou_vs_target"] <= 1.0

    def test_validation_error_envelope(self, client, bg_path, tmp_path):
        resp = client.post("/v1/optimize",
                           json=manifest_body(bg_path, tmp_path,
                                              iterations=0))
        assert resp.status_code == 400
        err = resp.json()["error"]
        assert err["kind"] == "validation"
        assert "iterations" in err["message"]

    def test_unknown_field_envelope(self, client, bg_path, tmp_path):
        resp = client.post("/v1/optimize",
                           json=manifest_body(bg_path, tmp_path,
                                              temperature=0.7))
        assert resp.status_code == 400
        assert resp.json()["error"]["kind"] == "validation"

    def test_transport_error_envelope(self, bg_path, tmp_path):
        def down(request):
            raise httpx.ConnectError("refused", request=request)

        app = create_app(diffusion_transport=httpx.MockTransport(down))
        local = TestClient(app)
        resp = local.post("/v1/optimize",
                          json=manifest_body(bg_path, tmp_path,
                                             oracle="remote",
                                             endpoint="http://diffusion"))
        assert resp.status_code == 502
        assert resp.json()["error"]["kind"] == "transport"

    def test_place_through_service(self, bg_path, tmp_path):
        app = create_app(diffusion_transport=magenta_inpaint_transport())
        local = TestClient(app)
        resp = local.post("/v1/place",
                          json=manifest_body(bg_path, tmp_path,
                                             endpoint="http://diffusion"))
        assert resp.status_code == 200
        assert resp.json()["placed"].endswith("placed.png")

    def test_sweep_through_service(self, client, bg_path, tmp_path):
        resp = client.post("/v1/sweep", json={
            "axis": "scale", "values": [0.5, 0.7],
            "manifest": manifest_body(bg_path, tmp_path, iterations=8,
                                      out_dir=str(tmp_path / "sweep"))})
        assert resp.status_code == 200
        assert len(resp.json()["rows"]) == 2

    def test_sweep_casts_blob_values_to_int(self, client, bg_path, tmp_path):
        resp = client.post("/v1/sweep", json={
            "axis": "blobs", "values": [1.0],
            "manifest": manifest_body(bg_path, tmp_path, iterations=5,
                                      out_dir=str(tmp_path / "sweep"))})
        assert resp.status_code == 200
        assert resp.json()["rows"][0]["value"] == 1

    def test_progression_through_service(self, client, bg_path, tmp_path):
        run = manifest_body(bg_path, tmp_path)
        assert client.post("/v1/optimize", json=run).status_code == 200
        resp = client.post("/v1/progression", json={"run_dir": run["out_dir"]})
        assert resp.status_code == 200
        assert resp.json()["grid"] == [2, 2]

    def test_progression_missing_dir(self, client, tmp_path):
        resp = client.post("/v1/progression",
                           json={"run_dir": str(tmp_path / "nope")})
        assert resp.status_code == 400
        assert resp.json()["error"]["kind"] == "validation"


class TestCli:
    def optimize_args(self, bg_path, tmp_path, **over):
        args = ["optimize", "--background", bg_path, "--prompt",
                "A person sitting there", "--out", str(tmp_path / "run"),
                "--oracle", "mock-recovery", "--iters", "15",
                "--resolution", "32x32", "--snapshot-every", "10",
                "--seed", "3"]
        for key, value in over.items():
            args += [f"--{key}", str(value)]
        return args

    def test_optimize_exit_zero_and_prints_iou(self, bg_path, tmp_path,
                                               capsys):
        code = main(self.optimize_args(bg_path, tmp_path))
        out = capsys.readouterr().out
        assert code == 0
        assert "final IoU" in out
        assert "run dir" in out

    def test_zero_iterations_exits_2(self, bg_path, tmp_path, capsys):
        code = main(self.optimize_args(bg_path, tmp_path, iters=0))
        err = capsys.readouterr().err
        assert code == 2
        assert "error (validation)" in err

    def test_missing_background_file_exits_2(self, tmp_path, capsys):
        code = main(self.optimize_args(str(tmp_path / "nope.png"), tmp_path))
        err = capsys.readouterr().err
        assert code == 2
        assert "background not found" in err

    def test_missing_required_flags_exit_2(self, capsys):
        code = main(["optimize", "--prompt", "p"])
        err = capsys.readouterr().err
        assert code == 2
        assert "--background" in err and "--out" in err

    def test_unreachable_server_exits_3(self, bg_path, tmp_path, capsys):
        args = ["--server", "http://127.0.0.1:9"] + self.optimize_args(
            bg_path, tmp_path)
        code = main(args)
        err = capsys.readouterr().err
        assert code == 3
        assert "engine unreachable" in err

    def test_config_file_with_flag_override(self, bg_path, tmp_path, capsys):
        cfg = {"background": bg_path, "prompt": "A person sitting there",
               "out_dir": str(tmp_path / "cfg_run"),
               "oracle": "mock-recovery", "iterations": 999,
               "resolution": [32, 32], "snapshot_every": 10, "seed": 3}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        code = main(["optimize", "--config", str(cfg_path),
                     "--iters", "12"])
        out = capsys.readouterr().out
        assert code == 0
        assert "iterations: 12" in out

    def test_progression_verb(self, bg_path, tmp_path, capsys):
        assert main(self.optimize_args(bg_path, tmp_path)) == 0
        capsys.readouterr()
        code = main(["progression", "--run", str(tmp_path / "run")])
        out = capsys.readouterr().out
        assert code == 0
        assert "contact sheet" in out

    def test_sweep_verb(self, bg_path, tmp_path, capsys):
        args = ["sweep", "--axis", "scale", "--values", "0.5,0.7",
                "--background", bg_path, "--prompt", "p",
                "--out", str(tmp_path / "sweep"), "--oracle", "mock-recovery",
                "--iters", "8", "--resolution", "32x32",
                "--snapshot-every", "10"]
        code = main(args)
        out = capsys.readouterr().out
        assert code == 0
        assert "scale=0.5" in out and "scale=0.7" in out

    def test_prompt_list_asset(self):
        from blobplace import assets
        prompts = assets.prompts()
        assert "A person sitting on a sofa" in prompts
        assert len(prompts) >= 20
