"""Wire-level behaviour of the three routes, straight over httpx."""

import json
import threading

import httpx
import numpy as np
import pytest

from capseg.masks import parse_pgm, parse_vocab_json

from capseg_bridge.config import BridgeConfig
from capseg_bridge.errors import ConfigError
from capseg_bridge.server import make_server

CAPTION_REQ = {
    "embeddings": [[0.1, 0.2], [0.3, 0.4]],
    "min_len": 4,
    "max_len": 25,
    "top_p": 1.0,
    "repetition_penalty": 100.0,
    "seed": 7,
}


class TestConfig:
    def test_defaults_validate(self):
        cfg = BridgeConfig().validate()
        assert set(cfg.enabled()) == {"encoder", "caption", "segment", "generate"}

    def test_empty_identifier_disables(self):
        cfg = BridgeConfig(generate_model="", encoder_model="").validate()
        assert set(cfg.enabled()) == {"caption", "segment"}

    @pytest.mark.parametrize(
        "kw, message",
        [
            ({"device": "tpu"}, "device"),
            ({"port": -1}, "port"),
            ({"port": 70000}, "port"),
            ({"host": ""}, "host"),
            ({"caption_model": "hf:blip"}, "no caption loader"),
            ({"segment_model": "weights.pt"}, "no segment loader"),
        ],
    )
    def test_bad_settings_rejected(self, kw, message):
        with pytest.raises(ConfigError, match=message):
            BridgeConfig(**kw).validate()


class TestCaptionRoute:
    def test_happy_path_and_length_bounds(self, live_server):
        resp = httpx.post(f"{live_server}/v1/caption", json=CAPTION_REQ)
        assert resp.status_code == 200
        caption = resp.json()["caption"]
        assert isinstance(caption, str)
        assert 4 <= len(caption.split()) <= 25

    def test_single_word_budget_honored(self, live_server):
        req = dict(CAPTION_REQ, min_len=1, max_len=1)
        resp = httpx.post(f"{live_server}/v1/caption", json=req)
        assert len(resp.json()["caption"].split()) == 1

    @pytest.mark.parametrize(
        "mangle",
        [
            lambda r: r.pop("seed"),
            lambda r: r.update(embeddings=[]),
            lambda r: r.update(embeddings=[[1.0], [2.0, 3.0]]),
            lambda r: r.update(min_len=10, max_len=4),
            lambda r: r.update(top_p="high"),
        ],
    )
    def test_bad_requests_get_400(self, live_server, mangle):
        req = json.loads(json.dumps(CAPTION_REQ))
        mangle(req)
        resp = httpx.post(f"{live_server}/v1/caption", json=req)
        assert resp.status_code == 400
        assert "error" in resp.json()

    def test_malformed_json_gets_400(self, live_server):
        resp = httpx.post(
            f"{live_server}/v1/caption",
            content=b"{not json",
            headers={"Content-Type": "application/json"},
        )
        assert resp.status_code == 400


class TestSegmentRoute:
    def test_pgm_body_and_vocab_header(self, live_server, image_file):
        names = ["background", "road", "car"]
        resp = httpx.post(
            f"{live_server}/v1/segment",
            json={"image_path": str(image_file), "class_names": names},
        )
        assert resp.status_code == 200
        labels = parse_pgm(resp.content, "response")
        assert labels.shape == (32, 48)  # native image size
        assert set(np.unique(labels)) <= set(range(len(names)))
        vocab, ignore = parse_vocab_json(resp.headers["x-vocab-json"], "header")
        assert vocab == {i: n for i, n in enumerate(names)}
        assert ignore == 255

    def test_missing_image_gets_400(self, live_server):
        resp = httpx.post(
            f"{live_server}/v1/segment",
            json={"image_path": "/nowhere/img.png", "class_names": ["background"]},
        )
        assert resp.status_code == 400

    def test_empty_class_list_gets_400(self, live_server, image_file):
        resp = httpx.post(
            f"{live_server}/v1/segment",
            json={"image_path": str(image_file), "class_names": []},
        )
        assert resp.status_code == 400

    def test_class_list_overflow_gets_400(self, live_server, image_file):
        names = [f"c{i}" for i in range(256)]
        resp = httpx.post(
            f"{live_server}/v1/segment",
            json={"image_path": str(image_file), "class_names": names},
        )
        assert resp.status_code == 400


class TestGenerateRoute:
    def test_empty_batch(self, live_server):
        resp = httpx.post(f"{live_server}/v1/generate", json={"dialogs": []})
        assert resp.status_code == 200
        assert resp.json() == {"responses": []}

    def test_quoted_single_words(self, live_server):
        dialogs = [
            [{"role": "user", "content": "Pick one: car, tree or house?"}],
            [{"role": "user", "content": ""}],
        ]
        resp = httpx.post(f"{live_server}/v1/generate", json={"dialogs": dialogs})
        responses = resp.json()["responses"]
        assert len(responses) == 2
        assert all(r.startswith("'") and r.endswith("'") for r in responses)
        assert responses[1] == "'background'"

    def test_bad_shape_gets_400(self, live_server):
        resp = httpx.post(f"{live_server}/v1/generate", json={"dialogs": "hello"})
        assert resp.status_code == 400


class TestRouting:
    def test_unknown_route_gets_404(self, live_server):
        resp = httpx.post(f"{live_server}/v1/transcribe", json={})
        assert resp.status_code == 404

    def test_disabled_endpoint_gets_404(self, image_file):
        server = make_server(BridgeConfig(port=0, generate_model=""))
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address[:2]
            base = f"http://{host}:{port}"
            assert httpx.post(f"{base}/v1/generate", json={"dialogs": []}).status_code == 404
            assert httpx.post(f"{base}/v1/caption", json=CAPTION_REQ).status_code == 200
        finally:
            server.shutdown()
            server.server_close()
            thread.join(timeout=5)
