"""Greedy one-to-one matching of detections to ground-truth signs.

A detection is a hit when its IoU with an unclaimed annotation reaches the
threshold (0.5 by default). Detections are visited in descending score
order, after keeping at most ``max_dets`` per image. Categories and salience
play no part in matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MixedImages
from .geometry import Box, boxes_to_array, iou_matrix

HIT_IOU = 0.5
MAX_DETS = 100


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: Box
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must lie in [0, 1], got {self.score!r}")


@dataclass
class MatchResult:
    # (index into the input detection list, annotation id, iou)
    matched_pairs: list[tuple[int, str, float]] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)
    unmatched_annotations: list[str] = field(default_factory=list)


def _check_single_image(dets: Sequence[Detection], gts=()) -> None:
    ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(ids) > 1:
        raise MixedImages(f"expected one image, got {sorted(ids)}")


def _capped_order(dets: Sequence[Detection], max_dets: int) -> list[int]:
    # sorted() is stable, so equal scores keep input order
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    return order[:max_dets]


def cap_detections(dets: Sequence[Detection], max_dets: int = MAX_DETS) -> list[Detection]:
    """Keep the ``max_dets`` highest-scoring detections, best first."""
    if max_dets < 1:
        raise ValueError("max_dets must be a positive integer")
    _check_single_image(dets)
    return [dets[i] for i in _capped_order(dets, max_dets)]


def match_image(
    dets: Sequence[Detection],
    gts: Sequence,
    iou_threshold: float = HIT_IOU,
    max_dets: int = MAX_DETS,
) -> MatchResult:
    """Match one image's detections to its annotations.

    Indices in the result refer to positions in ``dets`` as passed in.
    Detections dropped by the cap appear nowhere in the result.
    """
    _check_single_image(dets, gts)
    order = _capped_order(dets, max_dets)
    result = MatchResult()
    if not gts:
        result.unmatched_detections = list(order)
        return result

    gt_ids = [g.id for g in gts]
    # columns sorted by annotation id so argmax picks the lowest id on IoU ties
    col_order = sorted(range(len(gts)), key=lambda j: gt_ids[j])
    gt_boxes = boxes_to_array([gts[j].box for j in col_order])
    det_boxes = boxes_to_array([dets[i].box for i in order])
    ious = iou_matrix(det_boxes, gt_boxes)

    available = np.ones(len(col_order), dtype=bool)
    for row, det_idx in enumerate(order):
        cand = np.where(available & (ious[row] >= iou_threshold), ious[row], -1.0)
        best = int(np.argmax(cand))
        if cand[best] < 0.0:
            result.unmatched_detections.append(det_idx)
            continue
        available[best] = False
        result.matched_pairs.append((det_idx, gt_ids[col_order[best]], float(ious[row, best])))

    claimed = {pair[1] for pair in result.matched_pairs}
    result.unmatched_annotations = [gid for gid in gt_ids if gid not in claimed]
    return result
