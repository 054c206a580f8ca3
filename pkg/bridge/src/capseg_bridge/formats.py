"""Writers for the two on-disk/wire formats the pipeline consumes.

``.peg`` container: one compact JSON header line, then the grid as
little-endian float32, row-major.  Header keys are exactly ``version``,
``height``, ``width``, ``dim``, ``resolution_tag`` and ``dtype``.

Segment responses travel as a binary P5 PGM (maxval 255) plus a JSON
vocabulary object ``{"ignore_index": int, "names": {"<index>": name}}``
in the ``X-Vocab-Json`` header.
"""

import json

import numpy as np

PEG_VERSION = 1
PEG_DTYPE = "f32le"
IGNORE_INDEX = 255


def peg_bytes(data: np.ndarray, resolution_tag: str) -> bytes:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3:
        raise ValueError(f"grid must be (height, width, dim), got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("grid contains non-finite values")
    h, w, d = data.shape
    header = {
        "version": PEG_VERSION,
        "height": h,
        "width": w,
        "dim": d,
        "resolution_tag": resolution_tag,
        "dtype": PEG_DTYPE,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    return line.encode("utf-8") + np.ascontiguousarray(data, dtype="<f4").tobytes()


def pgm_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label mask must be 2-D, got shape {labels.shape}")
    if labels.dtype != np.uint8:
        raise ValueError(f"label mask must be uint8, got {labels.dtype}")
    h, w = labels.shape
    header = f"P5\n{w} {h}\n255\n"
    return header.encode("ascii") + np.ascontiguousarray(labels).tobytes()


def vocab_json(class_names: list[str], ignore_index: int = IGNORE_INDEX) -> str:
    names = {str(i): name for i, name in enumerate(class_names)}
    doc = {"ignore_index": ignore_index, "names": names}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))
