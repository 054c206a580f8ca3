"""Pixel label masks and their on-disk form.

A mask is stored as a binary PGM (P5, maxval 255) next to a JSON sidecar that
binds mask indices to class names.  Index 255 is reserved for ignored pixels
and never appears in the vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from capseg.errors import ValidationError

IGNORE_INDEX = 255


@dataclass
class LabelMask:
    """A (height, width) uint8 label image plus its index -> name binding."""

    height: int
    width: int
    labels: np.ndarray
    vocabulary: dict[int, str] = field(default_factory=dict)
    ignore_index: int = IGNORE_INDEX

    def validate(self) -> "LabelMask":
        if self.labels.shape != (self.height, self.width):
            raise ValidationError(
                f"mask shape {self.labels.shape} != {(self.height, self.width)}"
            )
        if self.labels.dtype != np.uint8:
            raise ValidationError(f"mask dtype must be uint8, got {self.labels.dtype}")
        present = {int(v) for v in np.unique(self.labels)} - {self.ignore_index}
        missing = present - set(self.vocabulary)
        if missing:
            raise ValidationError(f"mask labels without vocabulary entries: {sorted(missing)}")
        if self.ignore_index in self.vocabulary:
            raise ValidationError("ignore_index must not have a vocabulary entry")
        for idx, name in self.vocabulary.items():
            if not (0 <= idx <= 255):
                raise ValidationError(f"vocabulary index {idx} out of range")
            if not name or not isinstance(name, str):
                raise ValidationError(f"empty vocabulary name for index {idx}")
        return self

    def class_pixels(self, index: int) -> int:
        return int(np.count_nonzero(self.labels == index))


def vocab_sidecar_path(mask_path) -> Path:
    return Path(mask_path).with_suffix(".vocab.json")


def save_mask(mask: LabelMask, path, config_hash: str | None = None) -> None:
    """Write the PGM plus its ``<name>.vocab.json`` sidecar.

    ``config_hash`` lands in a PGM comment so artifacts stay traceable to the
    exact configuration that produced them.
    """
    mask.validate()
    header = "P5\n"
    if config_hash:
        header += f"# cfg:{config_hash}\n"
    header += f"{mask.width} {mask.height}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(mask.labels, dtype=np.uint8).tobytes())
    sidecar = {
        "ignore_index": mask.ignore_index,
        "names": {str(k): mask.vocabulary[k] for k in sorted(mask.vocabulary)},
    }
    text = json.dumps(sidecar, sort_keys=True, separators=(",", ":")) + "\n"
    vocab_sidecar_path(path).write_text(text, encoding="utf-8")


def parse_pgm(raw: bytes, source: str = "<pgm>") -> np.ndarray:
    """Parse a P5 PGM with maxval 255 into a (h, w) uint8 array."""
    if not raw.startswith(b"P5"):
        raise ValidationError(f"{source}: not a P5 PGM")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError(f"{source}: truncated header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ValidationError(f"{source}: bad header fields {fields}") from exc
    if maxval != 255:
        raise ValidationError(f"{source}: maxval must be 255, got {maxval}")
    payload = raw[pos:]
    if len(payload) != width * height:
        raise ValidationError(
            f"{source}: payload is {len(payload)} bytes, header implies {width * height}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def parse_vocab_json(text: str, source: str = "<vocab>") -> tuple[dict[int, str], int]:
    try:
        doc = json.loads(text)
        ignore = int(doc["ignore_index"])
        names = {int(k): str(v) for k, v in doc["names"].items()}
    except (AttributeError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{source}: bad vocabulary json: {exc}") from exc
    return names, ignore


def load_mask(path) -> LabelMask:
    path = Path(path)
    labels = parse_pgm(path.read_bytes(), str(path))
    sidecar = vocab_sidecar_path(path)
    if not sidecar.exists():
        raise ValidationError(f"missing vocabulary sidecar {sidecar}")
    names, ignore = parse_vocab_json(sidecar.read_text(encoding="utf-8"), str(sidecar))
    return LabelMask(
        height=labels.shape[0],
        width=labels.shape[1],
        labels=labels.copy(),
        vocabulary=names,
        ignore_index=ignore,
    ).validate()
