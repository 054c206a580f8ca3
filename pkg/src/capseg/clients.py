"""Clients for the three model services the pipeline drives.

Wire contracts:

* decoder     POST /v1/caption   JSON in, ``{"caption": str}`` out
* segmentor   POST /v1/segment   JSON in, PGM body + ``X-Vocab-Json`` header out
* LLM         POST /v1/generate  ``{"dialogs": [...]}`` in, ``{"responses": [...]}`` out

Each HTTP client retries connection-level failures a few times and then gives
up with ``ServiceUnavailable``; response-level problems (bad status, malformed
payload) raise ``RequestFailed`` immediately so callers can decide whether one
bad record should sink the batch.

The mock clients are fixture driven and fully deterministic; they exist so
every pipeline stage can run and be tested without model services.
"""

from __future__ import annotations

import json
import time
from typing import Protocol, runtime_checkable

import httpx
import numpy as np

from capseg import rng as rng_mod
from capseg.errors import CapsegError, TransportError, ValidationError
from capseg.masks import LabelMask, parse_pgm, parse_vocab_json

DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 3
RETRY_SLEEP = 0.05


class RequestFailed(CapsegError):
    """The service answered, but not with a usable response."""


class ServiceUnavailable(TransportError):
    """The service could not be reached after retries."""


@runtime_checkable
class DecoderClient(Protocol):
    def caption(self, embeddings: np.ndarray, params, seed: int) -> str: ...


@runtime_checkable
class SegmentorClient(Protocol):
    def segment(self, image_path: str, class_names: list[str]) -> LabelMask: ...


@runtime_checkable
class LlmClient(Protocol):
    def generate(self, dialogs: list[list[dict]]) -> list[str]: ...


def _post_with_retries(client: httpx.Client, url: str, retries: int, **kwargs) -> httpx.Response:
    last: Exception | None = None
    for attempt in range(retries):
        try:
            return client.post(url, **kwargs)
        except httpx.TransportError as exc:
            last = exc
            if attempt + 1 < retries:
                time.sleep(RETRY_SLEEP)
    raise ServiceUnavailable(f"POST {url} failed after {retries} attempts: {last}")


class HttpDecoderClient:
    """Caption decoder over HTTP."""

    def __init__(
        self,
        base_url: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        transport: httpx.BaseTransport | None = None,
    ):
        self._retries = retries
        self._client = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def caption(self, embeddings: np.ndarray, params, seed: int) -> str:
        payload = {
            "embeddings": np.asarray(embeddings, dtype=np.float64).tolist(),
            "min_len": params.min_len,
            "max_len": params.max_len,
            "top_p": params.top_p,
            "repetition_penalty": params.repetition_penalty,
            "seed": int(seed),
        }
        resp = _post_with_retries(self._client, "/v1/caption", self._retries, json=payload)
        if resp.status_code != 200:
            raise RequestFailed(f"/v1/caption returned {resp.status_code}")
        try:
            text = resp.json()["caption"]
        except (KeyError, json.JSONDecodeError) as exc:
            raise RequestFailed(f"/v1/caption returned malformed body: {exc}") from exc
        if not isinstance(text, str) or not text:
            raise RequestFailed("/v1/caption returned an empty caption")
        return text


class HttpSegmentorClient:
    """Text-promptable segmentor over HTTP."""

    def __init__(
        self,
        base_url: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        transport: httpx.BaseTransport | None = None,
    ):
        self._retries = retries
        self._client = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def segment(self, image_path: str, class_names: list[str]) -> LabelMask:
        if not class_names:
            raise ValidationError("class_names must be non-empty")
        payload = {"image_path": str(image_path), "class_names": list(class_names)}
        resp = _post_with_retries(self._client, "/v1/segment", self._retries, json=payload)
        if resp.status_code != 200:
            raise RequestFailed(f"/v1/segment returned {resp.status_code}")
        vocab_header = resp.headers.get("x-vocab-json")
        if not vocab_header:
            raise RequestFailed("/v1/segment response missing X-Vocab-Json header")
        names, ignore = parse_vocab_json(vocab_header, "/v1/segment X-Vocab-Json")
        expected = {i: n for i, n in enumerate(class_names)}
        if names != expected:
            raise RequestFailed(
                "/v1/segment vocabulary does not bind indices to the requested "
                f"class list: got {names}, expected {expected}"
            )
        labels = parse_pgm(resp.content, "/v1/segment body")
        return LabelMask(
            height=labels.shape[0],
            width=labels.shape[1],
            labels=labels.copy(),
            vocabulary=names,
            ignore_index=ignore,
        ).validate()


class HttpLlmClient:
    """Chat-style LLM over HTTP; one response per dialog, index aligned."""

    def __init__(
        self,
        base_url: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        transport: httpx.BaseTransport | None = None,
    ):
        self._retries = retries
        self._client = httpx.Client(base_url=base_url, timeout=timeout, transport=transport)

    def generate(self, dialogs: list[list[dict]]) -> list[str]:
        if not dialogs:
            return []
        resp = _post_with_retries(
            self._client, "/v1/generate", self._retries, json={"dialogs": dialogs}
        )
        if resp.status_code != 200:
            raise RequestFailed(f"/v1/generate returned {resp.status_code}")
        try:
            responses = resp.json()["responses"]
        except (KeyError, json.JSONDecodeError) as exc:
            raise RequestFailed(f"/v1/generate returned malformed body: {exc}") from exc
        if not isinstance(responses, list) or len(responses) != len(dialogs):
            raise RequestFailed(
                f"/v1/generate returned {len(responses) if isinstance(responses, list) else 'non-list'}"
                f" responses for {len(dialogs)} dialogs"
            )
        return [str(r) for r in responses]


# --------------------------------------------------------------------- mocks


class MockDecoder:
    """Deterministic decoder: a stable hash of the embedding subset and the
    request seed picks a row from a fixture caption table."""

    def __init__(self, table: list[str]):
        if not table:
            raise ValidationError("caption table must be non-empty")
        if any(not t for t in table):
            raise ValidationError("caption table entries must be non-empty")
        self.table = list(table)

    @classmethod
    def from_file(cls, path) -> "MockDecoder":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def caption(self, embeddings: np.ndarray, params, seed: int) -> str:
        content = rng_mod.stable_hash_floats(np.asarray(embeddings, dtype=np.float64))
        idx = rng_mod.derive_seed("mock-decoder", content, int(seed)) % len(self.table)
        return self.table[idx]


class MockSegmentor:
    """Fixture-driven segmentor.

    The fixture maps an image key (path or stem) to a region template: an
    integer region field plus each region's preferred class name.  At request
    time every region takes the index of its name in the requested class list,
    or 0 (the conventional background slot) when the name was not requested.
    Regions named ``__ignore__`` become the ignore index.
    """

    IGNORE_NAME = "__ignore__"

    def __init__(self, fixtures: dict):
        self.fixtures = fixtures

    @classmethod
    def from_file(cls, path) -> "MockSegmentor":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def _lookup(self, image_path: str) -> dict:
        from pathlib import Path

        key = str(image_path)
        if key in self.fixtures:
            return self.fixtures[key]
        stem = Path(image_path).stem
        if stem in self.fixtures:
            return self.fixtures[stem]
        raise ValidationError(f"no segmentation fixture for image {image_path!r}")

    def segment(self, image_path: str, class_names: list[str]) -> LabelMask:
        if not class_names:
            raise ValidationError("class_names must be non-empty")
        fixture = self._lookup(image_path)
        regions = np.asarray(fixture["regions"], dtype=np.int64)
        region_names = {int(k): v for k, v in fixture["region_names"].items()}
        index_of = {name: i for i, name in enumerate(class_names)}
        labels = np.zeros(regions.shape, dtype=np.uint8)
        for rid in np.unique(regions):
            name = region_names.get(int(rid))
            if name == self.IGNORE_NAME:
                value = 255
            else:
                value = index_of.get(name, 0)
            labels[regions == rid] = value
        return LabelMask(
            height=labels.shape[0],
            width=labels.shape[1],
            labels=labels,
            vocabulary={i: n for i, n in enumerate(class_names)},
        ).validate()


class MockLlm:
    """Rule-table LLM: first rule whose ``contains`` text occurs in the last
    user message supplies the response; otherwise ``default`` answers."""

    def __init__(self, rules: list[dict], default: str = "'background'"):
        for rule in rules:
            if "contains" not in rule or "response" not in rule:
                raise ValidationError("each rule needs 'contains' and 'response'")
        self.rules = list(rules)
        self.default = default

    @classmethod
    def from_file(cls, path) -> "MockLlm":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(doc.get("rules", []), doc.get("default", "'background'"))

    def generate(self, dialogs: list[list[dict]]) -> list[str]:
        out = []
        for dialog in dialogs:
            users = [m["content"] for m in dialog if m.get("role") == "user"]
            content = users[-1] if users else ""
            for rule in self.rules:
                if rule["contains"] in content:
                    out.append(rule["response"])
                    break
            else:
                out.append(self.default)
        return out
