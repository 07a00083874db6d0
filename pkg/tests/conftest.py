"""Shared fixture that runs the real diffusion service for end-to-end tests.

Tests depending on it skip when the TypeScript service has not been built.
Set BLOBPLACE_DIFFUSION_URL to reuse an already-running instance instead of
spawning one."""

import os
import socket
import subprocess
import time
from pathlib import Path

import httpx
import pytest

SERVER_JS = (Path(__file__).resolve().parent.parent
             / "diffusion-service" / "dist" / "server.js")


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="session")
def diffusion_service():
    override = os.environ.get("BLOBPLACE_DIFFUSION_URL")
    if override:
        yield override.rstrip("/")
        return
    if not SERVER_JS.exists():
        pytest.skip("diffusion service not built "
                    "(cd diffusion-service && npm install && npm run build)")
    port = _free_port()
    env = {**os.environ, "PORT": str(port),
           "MODEL_ID": "procedural-test-model", "DEVICE": "cpu"}
    proc = subprocess.Popen(["node", str(SERVER_JS)], env=env,
                            stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    url = f"http://127.0.0.1:{port}"
    try:
        deadline = time.monotonic() + 15.0
        while True:
            try:
                if httpx.get(url + "/healthz", timeout=1.0).status_code == 200:
                    break
            except httpx.TransportError:
                pass
            if proc.poll() is not None or time.monotonic() > deadline:
                tail = (proc.stdout.read().decode("utf-8", "replace")
                        if proc.stdout else "")
                raise RuntimeError(
                    f"diffusion service failed to start: {tail[:500]}")
            time.sleep(0.1)
        yield url
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
