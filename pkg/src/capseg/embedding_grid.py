"""Patch embedding grids: on-disk format, positional augmentation, resampling.

A grid is the per-patch output of a frozen vision encoder for one image at
one input resolution.  Grids travel between tools as ``.peg`` files: a single
JSON header line followed by raw little-endian float32 payload, row major.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from capseg.errors import ValidationError

PEG_VERSION = 1
PEG_DTYPE = "f32le"

_HEADER_KEYS = {"version", "height", "width", "dim", "resolution_tag", "dtype"}


@dataclass
class PatchEmbeddingGrid:
    """A (height, width, dim) float grid of patch embeddings.

    ``resolution_tag`` names the encoder input resolution that produced the
    grid (for example ``r384``); downstream stages key per-resolution
    behavior off it, so it must be non-empty.
    """

    height: int
    width: int
    dim: int
    data: np.ndarray
    resolution_tag: str

    def validate(self) -> "PatchEmbeddingGrid":
        if self.height < 1 or self.width < 1 or self.dim < 1:
            raise ValidationError(
                f"grid dims must be positive, got {self.height}x{self.width}x{self.dim}"
            )
        if not self.resolution_tag:
            raise ValidationError("resolution_tag must be non-empty")
        if self.data.shape != (self.height, self.width, self.dim):
            raise ValidationError(
                f"data shape {self.data.shape} does not match header "
                f"{(self.height, self.width, self.dim)}"
            )
        if not np.isfinite(self.data).all():
            raise ValidationError("grid contains non-finite values")
        return self

    @property
    def n_patches(self) -> int:
        return self.height * self.width

    def flat(self) -> np.ndarray:
        """(n_patches, dim) view in row-major patch order."""
        return self.data.reshape(self.n_patches, self.dim)


def save_peg(grid: PatchEmbeddingGrid, path) -> None:
    """Write a grid as a ``.peg`` file (JSON header line + f32le payload)."""
    grid.validate()
    header = {
        "version": PEG_VERSION,
        "height": grid.height,
        "width": grid.width,
        "dim": grid.dim,
        "resolution_tag": grid.resolution_tag,
        "dtype": PEG_DTYPE,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(line.encode("utf-8"))
        fh.write(payload)


def load_peg(path) -> PatchEmbeddingGrid:
    """Read a ``.peg`` file, validating the header and exact payload size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValidationError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: bad header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != _HEADER_KEYS:
        raise ValidationError(f"{path}: header keys must be exactly {sorted(_HEADER_KEYS)}")
    if header["version"] != PEG_VERSION:
        raise ValidationError(f"{path}: unsupported version {header['version']!r}")
    if header["dtype"] != PEG_DTYPE:
        raise ValidationError(f"{path}: unsupported dtype {header['dtype']!r}")
    h, w, d = header["height"], header["width"], header["dim"]
    for name, v in (("height", h), ("width", w), ("dim", d)):
        if not isinstance(v, int) or v < 1:
            raise ValidationError(f"{path}: bad {name}: {v!r}")
    payload = raw[nl + 1 :]
    expected = h * w * d * 4
    if len(payload) != expected:
        raise ValidationError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w, d)
    return PatchEmbeddingGrid(h, w, d, data, header["resolution_tag"]).validate()


@dataclass
class PositionalEncoding:
    """Fixed sinusoidal 2-D position code appended to patch embeddings.

    The channel budget splits in half between the row and the column axis.
    Within each half, sine and cosine values interleave per frequency, with
    frequencies laid out geometrically so periods span 1 to 10^4 patches.
    ``dim=0`` disables augmentation entirely.
    """

    dim: int = 256

    def __post_init__(self):
        if self.dim < 0 or (self.dim and self.dim % 4):
            raise ValidationError(f"positional dim must be 0 or divisible by 4, got {self.dim}")

    def _axis_code(self, length: int) -> np.ndarray:
        half = self.dim // 2
        exponents = np.arange(0, half, 2, dtype=np.float64) / half
        inv_freq = 1.0 / (10000.0 ** exponents)
        angles = np.arange(length, dtype=np.float64)[:, None] * inv_freq[None, :]
        code = np.empty((length, half), dtype=np.float64)
        code[:, 0::2] = np.sin(angles)
        code[:, 1::2] = np.cos(angles)
        return code

    def encode(self, height: int, width: int) -> np.ndarray:
        """(height, width, dim) array of position codes, all values in [-1, 1]."""
        if self.dim == 0:
            return np.zeros((height, width, 0), dtype=np.float64)
        half = self.dim // 2
        rows = self._axis_code(height)
        cols = self._axis_code(width)
        out = np.empty((height, width, self.dim), dtype=np.float64)
        out[:, :, :half] = rows[:, None, :]
        out[:, :, half:] = cols[None, :, :]
        return out


def augment(grid: PatchEmbeddingGrid, enc: PositionalEncoding) -> PatchEmbeddingGrid:
    """Concatenate position codes onto the feature axis.

    Content dims stay untouched in place; the encoding occupies the trailing
    ``enc.dim`` components.  With ``enc.dim == 0`` the input grid is returned
    unchanged (same object).
    """
    grid.validate()
    if enc.dim == 0:
        return grid
    codes = enc.encode(grid.height, grid.width)
    data = np.concatenate([grid.data, codes], axis=2)
    return PatchEmbeddingGrid(
        grid.height, grid.width, grid.dim + enc.dim, data, grid.resolution_tag
    ).validate()


def nearest_index_map(src_len: int, dst_len: int) -> np.ndarray:
    """Center-aligned nearest-neighbor source index for each target index."""
    if src_len < 1 or dst_len < 1:
        raise ValidationError("lengths must be positive")
    idx = ((np.arange(dst_len, dtype=np.float64) + 0.5) * src_len / dst_len).astype(np.int64)
    return np.minimum(idx, src_len - 1)


def resample_labels(labels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resample of an integer label field to (height, width).

    Pure index remapping: the output label set is always a subset of the
    input's, and resampling to an integer multiple and back is the identity.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValidationError(f"label field must be 2-D, got shape {labels.shape}")
    rows = nearest_index_map(labels.shape[0], height)
    cols = nearest_index_map(labels.shape[1], width)
    return labels[np.ix_(rows, cols)]
