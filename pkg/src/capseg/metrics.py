"""Segmentation quality metrics over label masks.

Two views of quality:

* ``miou``: standard per-class intersection over union.  Needs a shared
  vocabulary between prediction and ground truth, so in the open-vocabulary
  setting it only applies after class mapping.
* ``cmiou``: class-agnostic, every connected ground-truth segment is scored
  by the best-overlapping prediction segment, whatever its label.  This is
  the headline metric for unmapped open-vocabulary output.

Integer pixel tallies are kept alongside the ratios so per-image reports sum
exactly into dataset-level numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from capseg.errors import ValidationError
from capseg.masks import LabelMask

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class IouReport:
    """Per-class IoU with raw (intersection, union) pixel tallies."""

    per_class: dict[int, float]
    miou: float
    counts: dict[int, tuple[int, int]]


@dataclass(frozen=True)
class SegmentMatch:
    """One ground-truth segment and its best-overlapping prediction segment."""

    gt_segment: int
    pred_segment: int | None
    intersection: int
    union: int
    iou: float


@dataclass(frozen=True)
class CmIouReport:
    per_segment_best: list[SegmentMatch]
    cmiou: float
    n_gt_segments: int


@dataclass(frozen=True)
class DatasetCmIou:
    """Pooled over images: mean best IoU across every gt segment."""

    cmiou: float
    n_gt_segments: int


def _check_shapes(gt: LabelMask, pred: LabelMask) -> None:
    if (gt.height, gt.width) != (pred.height, pred.width):
        raise ValidationError(
            f"mask sizes differ: gt {gt.height}x{gt.width}, pred {pred.height}x{pred.width}"
        )
    if gt.ignore_index != pred.ignore_index:
        raise ValidationError(
            f"ignore_index differs: gt {gt.ignore_index}, pred {pred.ignore_index}"
        )


def _check_vocab(mask: LabelMask, class_set: dict[int, str], which: str) -> None:
    for idx, name in mask.vocabulary.items():
        if idx in class_set and class_set[idx] != name:
            raise ValidationError(
                f"{which} names index {idx} {name!r}, class set says {class_set[idx]!r}"
            )


def miou(gt: LabelMask, pred: LabelMask, class_set: dict[int, str]) -> IouReport:
    """Per-class IoU over the given class set.

    Pixels where ground truth is the ignore index are excluded entirely;
    classes absent from both masks are skipped, not scored as zero.
    """
    _check_shapes(gt, pred)
    if not class_set:
        raise ValidationError("class set is empty")
    if gt.ignore_index in class_set:
        raise ValidationError("class set must not contain the ignore index")
    _check_vocab(gt, class_set, "ground truth")
    _check_vocab(pred, class_set, "prediction")

    valid = gt.labels != gt.ignore_index
    counts: dict[int, tuple[int, int]] = {}
    per_class: dict[int, float] = {}
    for cid in sorted(class_set):
        g = (gt.labels == cid) & valid
        p = (pred.labels == cid) & valid
        union = int(np.count_nonzero(g | p))
        if union == 0:
            continue  # absent from both sides
        inter = int(np.count_nonzero(g & p))
        counts[cid] = (inter, union)
        per_class[cid] = inter / union
    mean = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return IouReport(per_class=per_class, miou=mean, counts=counts)


def _component_map(
    labels: np.ndarray, class_ids: list[int], keep: np.ndarray, structure: np.ndarray
) -> tuple[np.ndarray, int]:
    """Global component ids over per-class connected components.

    Ids are assigned class by class in ascending order, and within a class in
    first-pixel raster order, so component k is reproducible. Cells outside
    ``keep`` get -1.
    """
    out = np.full(labels.shape, -1, dtype=np.int64)
    next_id = 0
    for cid in class_ids:
        mask = (labels == cid) & keep
        comp, n = ndimage.label(mask, structure=structure)
        if n:
            out[mask] = comp[mask] + next_id - 1
            next_id += n
    return out, next_id


def cmiou(gt: LabelMask, pred: LabelMask, connectivity: int = 4) -> CmIouReport:
    """Best prediction-segment IoU for every connected ground-truth segment.

    A segment is a maximal connected component of one class. Matching is
    class-agnostic: the prediction segment with the highest IoU wins no
    matter what it is named, ties going to the earliest prediction segment.
    """
    _check_shapes(gt, pred)
    if connectivity not in (4, 8):
        raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = FOUR_CONN if connectivity == 4 else EIGHT_CONN

    valid = gt.labels != gt.ignore_index
    gt_classes = sorted(int(v) for v in np.unique(gt.labels) if v != gt.ignore_index)
    pred_classes = sorted(
        int(v) for v in np.unique(pred.labels[valid]) if v != pred.ignore_index
    )

    gt_map, n_gt = _component_map(gt.labels, gt_classes, valid, structure)
    pred_map, n_pred = _component_map(pred.labels, pred_classes, valid, structure)

    gt_sizes = np.bincount(gt_map[gt_map >= 0], minlength=n_gt)
    pred_sizes = np.bincount(pred_map[pred_map >= 0], minlength=max(n_pred, 1))

    both = (gt_map >= 0) & (pred_map >= 0)
    inter = np.zeros((n_gt, max(n_pred, 1)), dtype=np.int64)
    np.add.at(inter, (gt_map[both], pred_map[both]), 1)

    matches: list[SegmentMatch] = []
    for gi in range(n_gt):
        best_pred: int | None = None
        best_inter, best_union = 0, int(gt_sizes[gi])
        best_val = Fraction(0)
        for pj in range(n_pred):
            i = int(inter[gi, pj])
            u = int(gt_sizes[gi] + pred_sizes[pj] - i)
            val = Fraction(i, u)
            if val > best_val:
                best_val = val
                best_pred, best_inter, best_union = pj, i, u
        matches.append(
            SegmentMatch(
                gt_segment=gi,
                pred_segment=best_pred,
                intersection=best_inter,
                union=best_union,
                iou=best_inter / best_union,
            )
        )
    mean = sum(m.iou for m in matches) / n_gt if n_gt else 0.0
    return CmIouReport(per_segment_best=matches, cmiou=mean, n_gt_segments=n_gt)


# ------------------------------------------------------------- aggregation


def dataset_miou(reports: dict[str, IouReport]) -> IouReport:
    """Dataset-level mIoU from per-image integer tallies: per class,
    sum(intersections) / sum(unions), then the mean over classes seen."""
    totals: dict[int, list[int]] = {}
    for report in reports.values():
        for cid, (inter, union) in report.counts.items():
            acc = totals.setdefault(cid, [0, 0])
            acc[0] += inter
            acc[1] += union
    counts = {cid: (i, u) for cid, (i, u) in sorted(totals.items())}
    per_class = {cid: i / u for cid, (i, u) in counts.items()}
    mean = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return IouReport(per_class=per_class, miou=mean, counts=counts)


def dataset_cmiou(reports: dict[str, CmIouReport]) -> DatasetCmIou:
    """Pooled over all gt segments in the dataset, not averaged per image."""
    total = sum(r.n_gt_segments for r in reports.values())
    if total == 0:
        return DatasetCmIou(cmiou=0.0, n_gt_segments=0)
    score = sum(m.iou for r in reports.values() for m in r.per_segment_best)
    return DatasetCmIou(cmiou=score / total, n_gt_segments=total)


# ------------------------------------------------------------ report emits


def iou_report_to_dict(report: IouReport) -> dict:
    return {
        "miou": report.miou,
        "per_class": {str(k): v for k, v in sorted(report.per_class.items())},
        "counts": {str(k): list(v) for k, v in sorted(report.counts.items())},
    }


def cmiou_report_to_dict(report: CmIouReport) -> dict:
    return {
        "cmiou": report.cmiou,
        "n_gt_segments": report.n_gt_segments,
        "per_segment_best": [
            {
                "gt_segment": m.gt_segment,
                "pred_segment": m.pred_segment,
                "intersection": m.intersection,
                "union": m.union,
                "iou": m.iou,
            }
            for m in report.per_segment_best
        ],
    }


def iou_csv_rows(image_id: str, report: IouReport, class_set: dict[int, str]) -> list[tuple]:
    return [
        (image_id, class_set.get(cid, str(cid)), report.per_class[cid])
        for cid in sorted(report.per_class)
    ]


def cmiou_csv_rows(image_id: str, report: CmIouReport) -> list[tuple]:
    return [
        (image_id, f"segment_{m.gt_segment}", m.iou) for m in report.per_segment_best
    ]
