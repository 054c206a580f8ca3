"""Spatial denoising of consensus fields.

Two stages: a convolutional mean-field pass that sharpens the per-patch
distributions with a Gaussian smoothness prior, then hard assignment and an
iterated 3x3 majority filter that removes residual speckle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from capseg.backend import blur_field, majority_pass
from capseg.consensus import ClusterProbabilityField
from capseg.errors import ValidationError

# Unary probabilities are floored before the log so that a wrong-but-confident
# input patch can still be overturned by its neighborhood; with exact zeros
# the log term would veto any flip forever.  0.05 caps unary confidence at
# roughly 3 nats, which lets the default smoothness weight flip isolated
# one-hot noise within the default iteration budget.
UNARY_FLOOR = 0.05

MAJORITY_MAX_ITERS = 8


@dataclass
class CrfParams:
    """Mean-field settings: pairwise strength, kernel width, iterations."""

    smoothness_weight: float = 6.0
    smoothness_theta: float = 0.8
    n_iters: int = 5

    def validate(self) -> "CrfParams":
        if self.smoothness_weight < 0:
            raise ValidationError("smoothness_weight must be >= 0")
        if self.smoothness_theta <= 0:
            raise ValidationError("smoothness_theta must be > 0")
        if self.n_iters < 1:
            raise ValidationError("n_iters must be >= 1")
        return self


@dataclass
class DenoisedGrid:
    """Hard per-patch labels after CRF refinement and majority filtering."""

    height: int
    width: int
    labels: np.ndarray
    crf: CrfParams
    majority_iters: int
    majority_converged: bool

    def validate(self) -> "DenoisedGrid":
        if self.labels.shape != (self.height, self.width):
            raise ValidationError("label shape mismatch")
        if self.labels.min() < 0:
            raise ValidationError("negative labels")
        return self

    def present_labels(self) -> list[int]:
        return [int(v) for v in np.unique(self.labels)]


def gaussian_taps(theta: float) -> np.ndarray:
    """Truncated Gaussian window, radius ceil(3*theta), center included.

    Taps are returned unnormalized; the blur kernel divides by the in-bounds
    tap mass per position, which both normalizes and keeps border messages at
    full strength.
    """
    radius = math.ceil(3.0 * theta)
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    d2 = coords[:, None] ** 2 + coords[None, :] ** 2
    return np.exp(-d2 / (2.0 * theta * theta))


def crf_refine(field: ClusterProbabilityField, params: CrfParams) -> ClusterProbabilityField:
    """Run mean-field iterations against the input field as the unary term.

    Each iteration blurs the previous iterate with the Gaussian window, scales
    by the smoothness weight, adds the (floored) log unaries, and renormalizes
    per patch with a softmax.  The previous iterate is fully frozen while the
    new one is computed, so results do not depend on patch visit order.

    A zero smoothness weight returns the input probabilities bit for bit.
    """
    field.validate()
    params.validate()
    if params.smoothness_weight == 0:
        return ClusterProbabilityField(
            field.height, field.width, field.n_labels, field.probs.copy()
        )
    taps = gaussian_taps(params.smoothness_theta)
    log_unary = np.log(np.maximum(field.probs, UNARY_FLOOR))
    q = field.probs
    for _ in range(params.n_iters):
        scores = params.smoothness_weight * blur_field(q, taps) + log_unary
        scores -= scores.max(axis=2, keepdims=True)
        q = np.exp(scores)
        q /= q.sum(axis=2, keepdims=True)
    return ClusterProbabilityField(field.height, field.width, field.n_labels, q).validate()


def harden(field: ClusterProbabilityField) -> np.ndarray:
    """Per-patch argmax labels; probability ties go to the lowest label."""
    return np.argmax(field.probs, axis=2).astype(np.int32)


def majority_filter(
    labels: np.ndarray,
    n_labels: int | None = None,
    max_iters: int = MAJORITY_MAX_ITERS,
) -> tuple[np.ndarray, int, bool]:
    """Iterate 3x3 mode filtering until a pass changes nothing.

    Window clipping handles borders, the center patch votes too, and count
    ties resolve to the lowest label, so the filter never invents a label that
    is absent from its input.  Stops after ``max_iters`` passes even if the
    field keeps oscillating.  Returns (labels, passes_run, converged).
    """
    labels = np.asarray(labels, dtype=np.int32)
    if labels.ndim != 2:
        raise ValidationError("label field must be 2-D")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    if n_labels is None:
        n_labels = int(labels.max()) + 1
    elif labels.max() >= n_labels:
        raise ValidationError("labels outside [0, n_labels)")
    out = labels
    for i in range(1, max_iters + 1):
        out, changes = majority_pass(out, n_labels)
        if changes == 0:
            return out, i, True
    return out, max_iters, False


def denoise(
    field: ClusterProbabilityField,
    params: CrfParams | None = None,
    majority_max_iters: int = MAJORITY_MAX_ITERS,
) -> DenoisedGrid:
    """CRF refinement, hard assignment, then majority filtering."""
    params = (params or CrfParams()).validate()
    refined = crf_refine(field, params)
    hard = harden(refined)
    filtered, iters, converged = majority_filter(
        hard, n_labels=field.n_labels, max_iters=majority_max_iters
    )
    return DenoisedGrid(
        height=field.height,
        width=field.width,
        labels=filtered,
        crf=params,
        majority_iters=iters,
        majority_converged=converged,
    ).validate()


def denoised_to_dict(g: DenoisedGrid) -> dict:
    return {
        "height": g.height,
        "width": g.width,
        "labels": [int(v) for v in g.labels.reshape(-1)],
        "crf": {
            "smoothness_weight": g.crf.smoothness_weight,
            "smoothness_theta": g.crf.smoothness_theta,
            "n_iters": g.crf.n_iters,
        },
        "majority_iters": g.majority_iters,
        "majority_converged": g.majority_converged,
    }


def denoised_from_dict(d: dict) -> DenoisedGrid:
    try:
        crf = CrfParams(
            float(d["crf"]["smoothness_weight"]),
            float(d["crf"]["smoothness_theta"]),
            int(d["crf"]["n_iters"]),
        )
        g = DenoisedGrid(
            height=int(d["height"]),
            width=int(d["width"]),
            labels=np.asarray(d["labels"], dtype=np.int32).reshape(
                int(d["height"]), int(d["width"])
            ),
            crf=crf,
            majority_iters=int(d["majority_iters"]),
            majority_converged=bool(d["majority_converged"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad denoised grid record: {exc}") from exc
    return g.validate()
