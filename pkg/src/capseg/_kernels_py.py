"""Pure-numpy implementations of the hot kernels.

Drop-in fallback for the compiled extension module.  Both backends follow the
same accumulation order (window offsets scanned row-major) so their outputs
agree bitwise on the blur and majority kernels and up to ulp-level argmin
noise on the assignment kernel.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 512  # rows of x per distance block, keeps peak memory modest


def assign_points(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, float]:
    """Assign each row of ``x`` to its nearest center (squared Euclidean).

    Ties go to the lowest center index.  Returns (labels int32, objective),
    where objective is the sum of min squared distances in row order.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int32)
    objective = 0.0
    for start in range(0, n, _CHUNK):
        block = x[start : start + _CHUNK]
        diff = block[:, None, :] - centers[None, :, :]
        d2 = np.einsum("nkd,nkd->nk", diff, diff)
        idx = np.argmin(d2, axis=1)
        labels[start : start + _CHUNK] = idx
        objective += float(d2[np.arange(len(block)), idx].sum())
    return labels, objective


def blur_field(q: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Window-normalized convolution of a (H, W, L) field with 2-D taps.

    Each output position averages over the in-bounds part of the window,
    weighted by ``taps`` and divided by the in-bounds tap mass, so border
    positions keep full-strength (normalized) messages.
    """
    q = np.asarray(q, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    h, w, n_labels = q.shape
    r = taps.shape[0] // 2
    acc = np.zeros_like(q)
    mass = np.zeros((h, w), dtype=np.float64)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            t = taps[di + r, dj + r]
            src_i = slice(max(0, di), h + min(0, di))
            dst_i = slice(max(0, -di), h + min(0, -di))
            src_j = slice(max(0, dj), w + min(0, dj))
            dst_j = slice(max(0, -dj), w + min(0, -dj))
            acc[dst_i, dst_j] += t * q[src_i, src_j]
            mass[dst_i, dst_j] += t
    return acc / mass[:, :, None]


def majority_pass(labels: np.ndarray, n_labels: int) -> tuple[np.ndarray, int]:
    """One 3x3 clipped-window mode pass over an integer label field.

    The window includes the center patch; count ties resolve to the lowest
    label.  Returns (new_labels, number_of_changed_patches).
    """
    labels = np.asarray(labels, dtype=np.int32)
    h, w = labels.shape
    counts = np.zeros((h, w, n_labels), dtype=np.int32)
    eye = np.eye(n_labels, dtype=np.int32)
    onehot = eye[labels]
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            src_i = slice(max(0, di), h + min(0, di))
            dst_i = slice(max(0, -di), h + min(0, -di))
            src_j = slice(max(0, dj), w + min(0, dj))
            dst_j = slice(max(0, -dj), w + min(0, -dj))
            counts[dst_i, dst_j] += onehot[src_i, src_j]
    out = np.argmax(counts, axis=2).astype(np.int32)
    changes = int(np.count_nonzero(out != labels))
    return out, changes
