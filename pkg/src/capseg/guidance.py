"""From denoised cluster grids to full-resolution label masks.

Two products come out of this stage: the coarse cluster mask (each cluster's
patch footprint painted at image resolution, useful as a baseline and for
inspection) and the guided segmentation, where the discovered noun set is
handed to an open-vocabulary segmentor as its class list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from capseg.clients import RequestFailed, SegmentorClient, ServiceUnavailable
from capseg.denoise import DenoisedGrid
from capseg.embedding_grid import resample_labels
from capseg.errors import TransportError, ValidationError
from capseg.masks import IGNORE_INDEX, LabelMask
from capseg.noun_filter import NounSet

BACKGROUND = "background"


@dataclass
class ClusterMask:
    """A denoised patch grid blown up to image resolution.

    Labels are cluster ids, not class indices; every mask region is exactly
    the union of the pixel footprints of the patches in that cluster.
    """

    height: int
    width: int
    labels: np.ndarray
    source_labels: frozenset[int]

    def validate(self) -> "ClusterMask":
        if self.labels.shape != (self.height, self.width):
            raise ValidationError(
                f"mask shape {self.labels.shape} != {(self.height, self.width)}"
            )
        present = frozenset(int(v) for v in np.unique(self.labels))
        if present != self.source_labels:
            raise ValidationError(
                f"mask labels {sorted(present)} != grid labels {sorted(self.source_labels)}"
            )
        return self


def clusters_to_mask(denoised: DenoisedGrid, image_h: int, image_w: int) -> ClusterMask:
    """Nearest-neighbor upsample of the cluster grid to pixel resolution."""
    if image_h < 1 or image_w < 1:
        raise ValidationError(f"target size must be positive, got {image_h}x{image_w}")
    labels = resample_labels(denoised.labels, image_h, image_w)
    return ClusterMask(
        height=image_h,
        width=image_w,
        labels=labels,
        source_labels=frozenset(denoised.present_labels()),
    ).validate()


def cluster_mask_to_label_mask(mask: ClusterMask) -> LabelMask:
    """View a cluster mask as a LabelMask with synthetic per-cluster names.

    Lets cluster output flow through the same serialization and evaluation
    paths as guided segmentations; the names carry no semantics.
    """
    if any(label > 254 or label < 0 for label in mask.source_labels):
        raise ValidationError("cluster ids must fit the uint8 label range")
    return LabelMask(
        height=mask.height,
        width=mask.width,
        labels=mask.labels.astype(np.uint8),
        vocabulary={int(i): f"cluster_{int(i)}" for i in sorted(mask.source_labels)},
        ignore_index=IGNORE_INDEX,
    ).validate()


def guidance_class_list(nouns: NounSet) -> list[str]:
    """The segmentor class list: background at index 0, then the nouns in
    first-seen order."""
    if len(nouns) == 0:
        raise ValidationError("noun set is empty; nothing to guide the segmentor with")
    return [BACKGROUND] + [n for n in nouns if n != BACKGROUND]


def segment_with_guidance(
    image_ref: str, nouns: NounSet, segmentor: SegmentorClient
) -> LabelMask:
    """One segmentor call with the full noun list as the open vocabulary."""
    class_names = guidance_class_list(nouns)
    try:
        mask = segmentor.segment(str(image_ref), class_names)
    except (RequestFailed, ServiceUnavailable) as exc:
        raise TransportError(f"segmentor failed for {image_ref}: {exc}") from exc
    expected = {i: n for i, n in enumerate(class_names)}
    if mask.vocabulary != expected:
        raise ValidationError(
            f"segmentor vocabulary {mask.vocabulary} does not match the request {expected}"
        )
    return mask
