"""Shared fixtures: a live bridge server on an ephemeral port and a small
real image for the segment and dump paths."""

import threading

import numpy as np
import pytest
from PIL import Image

from capseg_bridge.config import BridgeConfig
from capseg_bridge.server import make_server


@pytest.fixture(scope="session")
def live_server():
    server = make_server(BridgeConfig(port=0))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    yield f"http://{host}:{port}"
    server.shutdown()
    server.server_close()
    thread.join(timeout=5)


@pytest.fixture(scope="session")
def image_file(tmp_path_factory):
    """A 48x32 image with enough structure that patches differ."""
    rng = np.random.default_rng(4)
    base = rng.integers(0, 256, size=(32, 48, 3), dtype=np.uint8)
    base[:16, :24] = (200, 40, 40)
    base[16:, 24:] = (30, 160, 220)
    path = tmp_path_factory.mktemp("images") / "scene.png"
    Image.fromarray(base).save(path)
    return path
