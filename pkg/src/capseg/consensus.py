"""Cross-run consensus: align ensemble clusterings and fuse them into
per-patch label distributions.

The run with the most surviving clusters becomes the reference frame.  Every
other run's clusters are matched onto reference clusters by mask overlap
(IoU), the runs are relabeled into the reference frame, and the per-patch
relative frequency of each reference label across runs becomes its
probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from capseg.clustering import ClusterAssignment
from capseg.embedding_grid import resample_labels
from capseg.errors import ValidationError


@dataclass
class AlignmentMap:
    """Source-cluster to reference-cluster mapping for one run.

    ``one_to_one[i]`` records whether source cluster i kept its Hungarian
    match; the rest were routed through the per-cluster argmax rule, which
    may map several sources onto the same reference cluster.
    """

    targets: np.ndarray
    one_to_one: np.ndarray
    iou: np.ndarray

    def validate(self, k_ref: int) -> "AlignmentMap":
        if self.targets.min() < 0 or self.targets.max() >= k_ref:
            raise ValidationError("alignment targets outside reference label range")
        matched = self.targets[self.one_to_one]
        if len(np.unique(matched)) != len(matched):
            raise ValidationError("one-to-one matches collide")
        return self


@dataclass
class ClusterProbabilityField:
    """Per-patch distribution over the reference label set."""

    height: int
    width: int
    n_labels: int
    probs: np.ndarray

    def validate(self) -> "ClusterProbabilityField":
        if self.probs.shape != (self.height, self.width, self.n_labels):
            raise ValidationError(
                f"probs shape {self.probs.shape} != "
                f"{(self.height, self.width, self.n_labels)}"
            )
        if not np.isfinite(self.probs).all():
            raise ValidationError("probabilities contain non-finite values")
        if self.probs.min() < 0:
            raise ValidationError("probabilities must be non-negative")
        sums = self.probs.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValidationError("per-patch probabilities must sum to 1 within 1e-9")
        return self


def select_reference(assignments: list[ClusterAssignment]) -> int:
    """Index of the run with the most surviving clusters; ties go to the
    earliest run in the deterministic run order."""
    if not assignments:
        raise ValidationError("no assignments given")
    best = 0
    for i, a in enumerate(assignments[1:], start=1):
        if a.k_effective > assignments[best].k_effective:
            best = i
    return best


def iou_counts(
    source: np.ndarray, k_src: int, reference: np.ndarray, k_ref: int
) -> tuple[np.ndarray, np.ndarray]:
    """Integer (intersection, union) tables between cluster masks.

    Returns two (k_src, k_ref) int64 arrays; union is never zero because both
    sides index non-empty clusters.
    """
    src = source.reshape(-1).astype(np.int64)
    ref = reference.reshape(-1).astype(np.int64)
    inter = np.bincount(src * k_ref + ref, minlength=k_src * k_ref).reshape(k_src, k_ref)
    size_src = np.bincount(src, minlength=k_src)
    size_ref = np.bincount(ref, minlength=k_ref)
    union = size_src[:, None] + size_ref[None, :] - inter
    return inter, union


def align(reference: ClusterAssignment, other: ClusterAssignment) -> AlignmentMap:
    """Match ``other``'s clusters onto reference clusters.

    Hungarian assignment on cost (1 - IoU) pairs off as many clusters as the
    smaller side allows; a source keeps its match only when the matched IoU is
    positive.  Everything else (surplus sources when the run has more clusters
    than the reference, and zero-overlap matches) takes the reference cluster
    with the highest IoU, ties to the lowest index, so a source disjoint from
    every reference cluster lands on index 0.
    """
    if (reference.height, reference.width) != (other.height, other.width):
        raise ValidationError("assignments must share grid dimensions; resample first")
    inter, union = iou_counts(
        other.labels, other.k_effective, reference.labels, reference.k_effective
    )
    iou = inter / union
    k_src = other.k_effective
    targets = np.full(k_src, -1, dtype=np.int64)
    one_to_one = np.zeros(k_src, dtype=bool)
    rows, cols = linear_sum_assignment(1.0 - iou)
    for r, c in zip(rows, cols):
        if inter[r, c] > 0:
            targets[r] = c
            one_to_one[r] = True
    for r in np.flatnonzero(targets < 0):
        targets[r] = int(np.argmax(iou[r]))
    return AlignmentMap(targets, one_to_one, iou).validate(reference.k_effective)


def apply_alignment(other: ClusterAssignment, amap: AlignmentMap) -> np.ndarray:
    """Rewrite a run's labels into the reference frame (plain label array)."""
    if len(amap.targets) != other.k_effective:
        raise ValidationError("alignment map does not cover the run's clusters")
    return amap.targets[other.labels].astype(np.int32)


def fuse(label_fields: list[np.ndarray], n_labels: int) -> ClusterProbabilityField:
    """Relative-frequency fusion of reference-frame label fields.

    P(label | patch) = (runs voting for label at patch) / (number of runs).
    Order of the fields does not matter.
    """
    if not label_fields:
        raise ValidationError("no label fields to fuse")
    shape = label_fields[0].shape
    h, w = shape
    counts = np.zeros((h * w, n_labels), dtype=np.int64)
    idx = np.arange(h * w)
    for f in label_fields:
        f = np.asarray(f)
        if f.shape != shape:
            raise ValidationError(f"field shape {f.shape} != {shape}")
        if f.min() < 0 or f.max() >= n_labels:
            raise ValidationError("labels outside [0, n_labels)")
        counts[idx, f.reshape(-1)] += 1
    probs = counts.reshape(h, w, n_labels) / float(len(label_fields))
    return ClusterProbabilityField(h, w, n_labels, probs).validate()


def consensus_field(assignments: list[ClusterAssignment]) -> ClusterProbabilityField:
    """Full consensus pass: resample to the finest grid, pick the reference,
    align every other run, and fuse."""
    if not assignments:
        raise ValidationError("no assignments given")
    target_h = max(a.height for a in assignments)
    target_w = max(a.width for a in assignments)
    resampled = []
    for a in assignments:
        labels = resample_labels(a.labels, target_h, target_w)
        resampled.append(
            ClusterAssignment(
                height=target_h,
                width=target_w,
                k_effective=a.k_effective,
                run_meta=a.run_meta,
                labels=labels,
            ).validate()
        )
    ref_idx = select_reference(resampled)
    reference = resampled[ref_idx]
    fields = []
    for i, a in enumerate(resampled):
        if i == ref_idx:
            fields.append(a.labels)
        else:
            fields.append(apply_alignment(a, align(reference, a)))
    return fuse(fields, reference.k_effective)


def field_to_dict(f: ClusterProbabilityField) -> dict:
    """JSON-ready form with flat row-major probabilities."""
    return {
        "height": f.height,
        "width": f.width,
        "n_labels": f.n_labels,
        "probs": [float(v) for v in f.probs.reshape(-1)],
    }


def field_from_dict(d: dict) -> ClusterProbabilityField:
    try:
        h, w, n = int(d["height"]), int(d["width"]), int(d["n_labels"])
        probs = np.asarray(d["probs"], dtype=np.float64).reshape(h, w, n)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad probability field record: {exc}") from exc
    return ClusterProbabilityField(h, w, n, probs).validate()
