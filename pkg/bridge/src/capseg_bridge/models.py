"""Model backends behind the bridge endpoints.

Every endpoint takes its backend from a loader table keyed by the scheme of
the model identifier (the part before the first ``:``).  The package ships
one family, ``stub:<seed>``: fully deterministic CPU models that stand in
for the real checkpoints so the services and their wire contracts can be
exercised anywhere.  Real checkpoints plug in by registering a loader:

    from capseg_bridge import models

    def load_blip_captioner(spec: str, device: str):
        ...  # import torch/transformers here, load the pinned checkpoint
    models.CAPTIONERS["blip"] = load_blip_captioner

after which ``--caption-model blip:Salesforce/blip-image-captioning-large``
resolves like any built-in.  The README pins the reference checkpoints.

Stub determinism matters more than realism: identical requests must produce
identical responses across processes and platforms, so all randomness is
derived from sha256 of the request content, never from global state.
"""

import hashlib
import re

import numpy as np
from PIL import Image

from capseg_bridge.errors import ConfigError, ModelError

PATCH = 16  # encoder patch side in pixels; 384 -> 24x24, 512 -> 32x32

_WORDS = (
    "tree car person dog cat road sky building window door table chair "
    "bird boat grass water mountain flower horse sheep train bus bottle "
    "lamp fence sign bridge wall roof field cloud stone sand river bench "
    "plant kite truck bicycle umbrella hat shoe bag cup plate bowl clock"
).split()


def _digest(*parts) -> int:
    """Stable 64-bit hash of strings, ints and float buffers."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part, dtype=np.float64).tobytes())
        elif isinstance(part, bytes):
            h.update(part)
        else:
            h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "big")


def _generator(*parts) -> np.random.Generator:
    return np.random.default_rng(_digest(*parts))


def _stub_seed(spec: str) -> int:
    if spec == "":
        return 0
    try:
        return int(spec)
    except ValueError:
        raise ConfigError(f"stub model spec must be an integer seed, got {spec!r}") from None


class StubEncoder:
    """Patch featurizer: per-patch color statistics through a fixed random
    projection.  Crude, but it varies with image content the way a real
    encoder does, which is all the desk-scale pipeline needs."""

    def __init__(self, seed: int = 0, dim: int = 32):
        self.seed = seed
        self.dim = dim
        gen = _generator("stub-encoder", seed)
        self._project = gen.normal(size=(8, dim))

    def encode(self, image: Image.Image, resolution: int) -> np.ndarray:
        if resolution < PATCH or resolution % PATCH:
            raise ModelError(f"resolution must be a positive multiple of {PATCH}, got {resolution}")
        side = resolution // PATCH
        resized = image.convert("RGB").resize((resolution, resolution), Image.BILINEAR)
        pixels = np.asarray(resized, dtype=np.float64) / 255.0
        patches = pixels.reshape(side, PATCH, side, PATCH, 3).transpose(0, 2, 1, 3, 4)
        mean = patches.mean(axis=(2, 3))
        std = patches.std(axis=(2, 3))
        dx = np.abs(np.diff(patches, axis=3)).mean(axis=(2, 3, 4), keepdims=False)
        dy = np.abs(np.diff(patches, axis=2)).mean(axis=(2, 3, 4), keepdims=False)
        feats = np.concatenate([mean, std, dx[..., None], dy[..., None]], axis=2)
        return np.tanh(feats @ self._project)


class StubCaptioner:
    """Caption = seeded draw of dictionary words.

    Length honors the requested bounds exactly; a repetition penalty above 1
    makes the draws distinct, mirroring what the penalty is for on the real
    decoder.  The same embeddings, parameters and seed always produce the
    same sentence.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def caption(self, embeddings: np.ndarray, params: dict, seed: int) -> str:
        base = _digest("stub-caption", self.seed, embeddings, int(seed))
        lo, hi = int(params["min_len"]), int(params["max_len"])
        n_words = lo + base % (hi - lo + 1)
        gen = _generator("stub-caption-words", self.seed, base)
        distinct = float(params["repetition_penalty"]) > 1.0
        picks = gen.choice(len(_WORDS), size=min(n_words, len(_WORDS)), replace=not distinct)
        words = [_WORDS[i] for i in picks]
        while len(words) < n_words:  # bounds win over distinctness
            words.append(words[len(words) % len(picks)])
        return " ".join(words)


class StubSegmentor:
    """Nearest-site partition of the image plane, one site class per
    requested name, at the image's native pixel size."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def segment(self, image: Image.Image, content: bytes, class_names: list[str]) -> np.ndarray:
        w, h = image.size
        k = len(class_names)
        gen = _generator("stub-segment", self.seed, _digest(content), *class_names)
        n_sites = min(3 * k, 32)
        sites = gen.uniform(0.0, 1.0, size=(n_sites, 2))
        site_class = np.arange(n_sites) % k
        yy = (np.arange(h) + 0.5) / h
        xx = (np.arange(w) + 0.5) / w
        d2 = (yy[:, None, None] - sites[:, 0]) ** 2 + (xx[None, :, None] - sites[:, 1]) ** 2
        return site_class[np.argmin(d2, axis=2)].astype(np.uint8)


class StubLlm:
    """Answers with one quoted word drawn from the prompt itself, so
    responses are plausible inputs for answer parsing downstream."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def generate(self, dialogs: list[list[dict]]) -> list[str]:
        out = []
        for dialog in dialogs:
            users = [m.get("content", "") for m in dialog if m.get("role") == "user"]
            content = users[-1] if users else ""
            tokens = re.findall(r"[a-z]+", content.lower())
            if tokens:
                word = tokens[_digest("stub-llm", self.seed, content) % len(tokens)]
            else:
                word = "background"
            out.append(f"'{word}'")
        return out


ENCODERS = {"stub": lambda spec, device: StubEncoder(_stub_seed(spec))}
CAPTIONERS = {"stub": lambda spec, device: StubCaptioner(_stub_seed(spec))}
SEGMENTORS = {"stub": lambda spec, device: StubSegmentor(_stub_seed(spec))}
LLMS = {"stub": lambda spec, device: StubLlm(_stub_seed(spec))}

_TABLES = {
    "encoder": ENCODERS,
    "caption": CAPTIONERS,
    "segment": SEGMENTORS,
    "generate": LLMS,
}


def check_scheme(kind: str, identifier: str) -> None:
    """Raise ConfigError unless the identifier names a registered loader."""
    table = _TABLES[kind]
    scheme = identifier.partition(":")[0]
    if scheme not in table:
        raise ConfigError(
            f"no {kind} loader for scheme {scheme!r} (registered: {sorted(table)})"
        )


def load(kind: str, identifier: str, device: str):
    """Resolve ``scheme:spec`` through the loader table for ``kind``."""
    check_scheme(kind, identifier)
    scheme, _, spec = identifier.partition(":")
    try:
        return _TABLES[kind][scheme](spec, device)
    except ConfigError:
        raise
    except Exception as exc:
        raise ModelError(f"loading {kind} model {identifier!r} failed: {exc}") from exc
