"""The three live endpoints, served from one process.

* ``POST /v1/caption``   JSON in, ``{"caption": str}`` out
* ``POST /v1/segment``   JSON in, PGM body plus ``X-Vocab-Json`` header out
* ``POST /v1/generate``  ``{"dialogs": [...]}`` in, ``{"responses": [...]}`` out

Connections are served concurrently, but a per-backend lock keeps each
model strictly serial: backends may sit on a single accelerator, so
serialization there is the safe default and any wanted concurrency lives
on the client side.  Model weights load once, in ``make_server``; the
handlers themselves are stateless.

Client mistakes (malformed JSON, missing fields, unreadable image) come
back as 400 with a JSON error body; a disabled endpoint answers 404 like
any unknown route.
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from capseg_bridge import formats, models
from capseg_bridge.config import BridgeConfig

MAX_CLASSES = 255  # index 255 is the ignore value, so class indices stop at 254


class _BadRequest(Exception):
    pass


def _captions_payload(payload: dict) -> tuple[np.ndarray, dict, int]:
    try:
        raw = payload["embeddings"]
        params = {
            "min_len": int(payload["min_len"]),
            "max_len": int(payload["max_len"]),
            "top_p": float(payload["top_p"]),
            "repetition_penalty": float(payload["repetition_penalty"]),
        }
        seed = int(payload["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise _BadRequest(f"bad caption request: {exc}") from exc
    try:
        embeddings = np.asarray(raw, dtype=np.float64)
    except ValueError as exc:  # ragged rows
        raise _BadRequest(f"bad embeddings: {exc}") from exc
    if embeddings.ndim != 2 or embeddings.size == 0:
        raise _BadRequest(f"embeddings must be a non-empty (n, dim) array, got shape {embeddings.shape}")
    if not np.isfinite(embeddings).all():
        raise _BadRequest("embeddings contain non-finite values")
    if not 1 <= params["min_len"] <= params["max_len"]:
        raise _BadRequest(f"need 1 <= min_len <= max_len, got {params['min_len']}..{params['max_len']}")
    return embeddings, params, seed


def _segment_payload(payload: dict) -> tuple[str, list[str]]:
    try:
        image_path = payload["image_path"]
        class_names = payload["class_names"]
    except (KeyError, TypeError) as exc:
        raise _BadRequest(f"bad segment request: {exc}") from exc
    if not isinstance(image_path, str) or not image_path:
        raise _BadRequest("image_path must be a non-empty string")
    if (
        not isinstance(class_names, list)
        or not class_names
        or any(not isinstance(n, str) or not n for n in class_names)
    ):
        raise _BadRequest("class_names must be a non-empty list of non-empty strings")
    if len(class_names) > MAX_CLASSES:
        raise _BadRequest(f"at most {MAX_CLASSES} class names fit a uint8 mask, got {len(class_names)}")
    return image_path, class_names


def _generate_payload(payload: dict) -> list[list[dict]]:
    dialogs = payload.get("dialogs")
    if not isinstance(dialogs, list):
        raise _BadRequest("dialogs must be a list")
    for dialog in dialogs:
        if not isinstance(dialog, list) or any(
            not isinstance(m, dict) or not isinstance(m.get("content", ""), str)
            for m in dialog
        ):
            raise _BadRequest("each dialog must be a list of message objects")
    return dialogs


class BridgeHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # default chatter goes to stderr
        if self.server.verbose:
            super().log_message(fmt, *args)

    def _reply(self, status: int, body: bytes, content_type: str, extra: dict | None = None):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for key, value in (extra or {}).items():
            self.send_header(key, value)
        self.end_headers()
        self.wfile.write(body)

    def _reply_json(self, status: int, doc: dict):
        self._reply(status, json.dumps(doc).encode("utf-8"), "application/json")

    def do_POST(self):
        route = self.server.backends.get(self.path)
        if route is None:
            self._reply_json(404, {"error": f"no such endpoint: {self.path}"})
            return
        backend, lock = route
        try:
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            if not isinstance(payload, dict):
                raise _BadRequest("request body must be a JSON object")
            with lock:  # one request per model at a time
                self._handle(self.path, backend, payload)
        except (_BadRequest, json.JSONDecodeError, UnicodeDecodeError) as exc:
            self._reply_json(400, {"error": str(exc)})
        except Exception as exc:  # a backend bug, not a client mistake
            self._reply_json(500, {"error": f"internal error: {exc}"})

    def _handle(self, path: str, backend, payload: dict):
        if path == "/v1/caption":
            embeddings, params, seed = _captions_payload(payload)
            self._reply_json(200, {"caption": backend.caption(embeddings, params, seed)})
        elif path == "/v1/segment":
            image_path, class_names = _segment_payload(payload)
            try:
                content = Path(image_path).read_bytes()
                with Image.open(image_path) as img:
                    img.load()
                    image = img.convert("RGB")
            except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
                raise _BadRequest(f"cannot read image {image_path}: {exc}") from exc
            labels = backend.segment(image, content, class_names)
            self._reply(
                200,
                formats.pgm_bytes(labels),
                "image/x-portable-graymap",
                {"X-Vocab-Json": formats.vocab_json(class_names)},
            )
        elif path == "/v1/generate":
            dialogs = _generate_payload(payload)
            self._reply_json(200, {"responses": backend.generate(dialogs)})


_ROUTES = {"caption": "/v1/caption", "segment": "/v1/segment", "generate": "/v1/generate"}


def make_server(cfg: BridgeConfig, verbose: bool = False) -> ThreadingHTTPServer:
    """Load every enabled backend once and return the ready-to-run server."""
    cfg.validate()
    server = ThreadingHTTPServer((cfg.host, cfg.port), BridgeHandler)
    server.daemon_threads = True
    server.backends = {
        _ROUTES[kind]: (models.load(kind, identifier, cfg.device), threading.Lock())
        for kind, identifier in cfg.enabled().items()
        if kind in _ROUTES
    }
    server.verbose = verbose
    return server


def serve(cfg: BridgeConfig, verbose: bool = True) -> None:
    server = make_server(cfg, verbose=verbose)
    host, port = server.server_address[:2]
    routes = ", ".join(sorted(server.backends)) or "none"
    print(f"bridge listening on {host}:{port} ({routes})")
    try:
        server.serve_forever()
    finally:
        server.server_close()
