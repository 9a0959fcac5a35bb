"""Per-box entropy, scene-level uncertainty, and two-model constructions.

Scene uncertainty is the class-weighted mean box entropy, normalized by the
number of boxes times the class count. The two-model helpers merge a
high-confidence "normal" prediction set with a second model's full output
(for scoring) and intersect the two sets class-aware (for counting likely
true objects).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvariantError
from .geometry import iou_3d, nms
from .types import Detection, Source, _as_probs

DEFAULT_CONF_THRESH = 0.7
DEFAULT_NMS_IOU = 0.5
DEFAULT_MATCH_IOU = 0.5


@dataclass(frozen=True)
class ClassWeights:
    """Per-class multipliers in (0, 1] applied to box entropies."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals or any(not (0.0 < v <= 1.0) for v in vals):
            raise InvariantError(f"class weights must lie in (0, 1]: {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, class_count: int) -> "ClassWeights":
        return cls((1.0,) * class_count)

    def with_reduced(self, class_id: int, weight: float) -> "ClassWeights":
        vals = list(self.values)
        vals[class_id] = weight
        return ClassWeights(tuple(vals))


def box_entropy(probs) -> float:
    """Shannon entropy (natural log) of a probability vector; 0*ln(0) is 0."""
    p = _as_probs(probs)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def scene_uncertainty(
    dets: Sequence[Detection],
    class_count: int,
    weights: Optional[ClassWeights] = None,
) -> float:
    """Weighted mean entropy of a scene's detections.

    Returns sum_b w(class(b)) * H(b) / (N_b * class_count); an empty
    detection list scores 0 (no predictions, no entropy evidence).
    """
    if not dets:
        return 0.0
    total = 0.0
    for det in dets:
        w = 1.0 if weights is None else weights.values[det.class_id]
        total += w * box_entropy(det.probs)
    return total / (len(dets) * class_count)


def ensemble_merge(
    normal_dets: Sequence[Detection],
    cpsp_dets: Sequence[Detection],
    conf_thresh: float = DEFAULT_CONF_THRESH,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> list[Detection]:
    """Merge confident normal-model boxes with all second-model boxes.

    Candidates are the normal detections at or above ``conf_thresh`` plus
    every cpsp detection; duplicates are removed by class-agnostic NMS and
    the survivors are retagged as ensemble output.
    """
    candidates = [d for d in normal_dets if d.score >= conf_thresh]
    candidates += list(cpsp_dets)
    kept = nms(candidates, nms_iou)
    return [dataclasses.replace(d, source=Source.ENSEMBLE) for d in kept]


def intersect_predictions(
    normal_dets: Sequence[Detection],
    cpsp_dets: Sequence[Detection],
    match_iou: float = DEFAULT_MATCH_IOU,
) -> list[Detection]:
    """Boxes predicted by both models: greedy one-to-one class-aware match.

    Same-class pairs with IoU >= ``match_iou`` are matched greedily by
    descending IoU; each match emits the cpsp-side detection retagged as
    intersection output, in cpsp input order.
    """
    pairs = []
    for i, dn in enumerate(normal_dets):
        for j, dc in enumerate(cpsp_dets):
            if dn.class_id != dc.class_id:
                continue
            iou = iou_3d(dn.box, dc.box)
            if iou >= match_iou:
                pairs.append((-iou, i, j))
    pairs.sort()
    used_normal: set[int] = set()
    used_cpsp: set[int] = set()
    matched: list[int] = []
    for _, i, j in pairs:
        if i in used_normal or j in used_cpsp:
            continue
        used_normal.add(i)
        used_cpsp.add(j)
        matched.append(j)
    return [
        dataclasses.replace(cpsp_dets[j], source=Source.INTERSECTION)
        for j in sorted(matched)
    ]
