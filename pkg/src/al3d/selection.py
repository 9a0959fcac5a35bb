"""Budgeted frame selection: ensemble entropy, box diversity, class caps.

The selector walks unlabeled scenes in descending uncertainty order,
skipping scenes too similar to what was already picked, counting boxes from
the model-intersection set against per-class caps, and down-weighting a
class's entropy contribution once its cap is crossed (which triggers a
re-sort of the remaining pool). Runs are deterministic given a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .clustering import representative_features
from .errors import ConfigError, InvariantError, MissingDataError
from .geometry import points_in_box
from .types import Box3D, ClassSet, Detection, Pool, Scene
from .uncertainty import (
    DEFAULT_CONF_THRESH,
    DEFAULT_MATCH_IOU,
    DEFAULT_NMS_IOU,
    ClassWeights,
    ensemble_merge,
    intersect_predictions,
    scene_uncertainty,
)

DESCRIPTOR_DIM = 16


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for one selection run.

    ``budget_boxes`` is the stop condition on counted boxes;
    ``similarity_threshold`` rejects redundant scenes;
    ``reduced_class_weight`` replaces a capped class's weight of 1.
    """

    budget_boxes: int
    similarity_threshold: float = 0.9
    reduced_class_weight: float = 0.1
    min_class_cap: float = 0.0
    feature_bank_size: int = 256
    class_balance: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.budget_boxes < 0:
            raise ConfigError(f"budget_boxes must be >= 0, got {self.budget_boxes}")
        if not (0.0 < self.similarity_threshold <= 1.0):
            raise ConfigError(
                f"similarity_threshold must lie in (0, 1], got {self.similarity_threshold}"
            )
        if not (0.0 < self.reduced_class_weight < 1.0):
            raise ConfigError(
                f"reduced_class_weight must lie in (0, 1), got {self.reduced_class_weight}"
            )
        if self.feature_bank_size < 1:
            raise ConfigError("feature_bank_size must be >= 1")


@dataclass(frozen=True, eq=False)
class CandidateScene:
    """Everything the selector needs to know about one unlabeled scene."""

    scene_id: str
    ensemble: tuple[Detection, ...]      # scoring set
    intersection: tuple[Detection, ...]  # counting set
    features: np.ndarray                 # (n_boxes, d) diversity features


@dataclass
class SelectionResult:
    chosen: list[str]
    box_counts: np.ndarray
    exhausted: bool
    events: list[dict]
    caps: np.ndarray
    final_weights: tuple[float, ...]

    @property
    def num_boxes(self) -> int:
        return int(self.box_counts.sum())


def class_caps(labeled_counts: Sequence[int], budget, min_cap: float = 0.0) -> np.ndarray:
    """Per-class selection caps, inversely proportional to labeled counts.

    cap_c = budget * (1/N_c) / sum_i (1/N_i), computed in exact integer
    arithmetic so equal counts split the budget exactly; zero counts are
    clamped to one first, and each cap is floored at ``min_cap``.
    """
    counts = [max(1, int(c)) for c in labeled_counts]
    if not counts:
        raise ConfigError("class_caps needs at least one class")
    prod = math.prod(counts)
    weights = [prod // c for c in counts]  # proportional to 1/N_c, exactly
    total = sum(weights)
    if isinstance(budget, (int, np.integer)):
        caps = [(int(budget) * w) / total for w in weights]
    else:
        caps = [float(budget) * w / total for w in weights]
    return np.array([max(c, float(min_cap)) for c in caps])


RANGE_SCALE = 20.0
POINT_COUNT_SCALE = 3.0


def box_descriptor(points, box: Box3D) -> np.ndarray:
    """Geometric stand-in for a detector embedding, L2-normalized.

    Log extents, yaw sin/cos, center height, scaled log point count, scaled
    BEV range, and an 8-bin histogram of in-box point radii. The scalar
    components are scaled to comparable spreads so no single block dominates
    the cosine; otherwise every same-class pair would sit near similarity 1
    and the diversity gate would reject everything. Used when detections
    carry no feature vector, so diversity stays runnable on synthetic data.
    """
    idx = points_in_box(points, box, 0.0)
    n = len(idx)
    if n:
        pts = np.asarray(points, dtype=np.float64)[idx, :3]
        center = np.array([box.cx, box.cy, box.cz])
        radii = np.linalg.norm(pts - center, axis=1)
        half_diag = 0.5 * math.sqrt(box.dx**2 + box.dy**2 + box.dz**2)
        hist, _ = np.histogram(np.clip(radii / half_diag, 0.0, 1.0), bins=8, range=(0.0, 1.0))
        hist = hist / n
    else:
        hist = np.zeros(8)
    vec = np.concatenate(
        [
            [
                math.log(box.dx),
                math.log(box.dy),
                math.log(box.dz),
                math.sin(box.yaw),
                math.cos(box.yaw),
                box.cz,
                math.log1p(n) / POINT_COUNT_SCALE,
                math.hypot(box.cx, box.cy) / RANGE_SCALE,
            ],
            hist,
        ]
    )
    return vec / np.linalg.norm(vec)  # norm >= 1 thanks to sin/cos


def detection_features(points, dets: Sequence[Detection]) -> np.ndarray:
    """Per-detection feature matrix: detector embeddings or the fallback."""
    rows = []
    for det in dets:
        if det.feature is not None:
            rows.append(np.asarray(det.feature, dtype=np.float64))
        else:
            rows.append(box_descriptor(points, det.box))
    if not rows:
        return np.zeros((0, DESCRIPTOR_DIM))
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise InvariantError(f"mixed feature dimensions in one scene: {sorted(dims)}")
    return np.stack(rows)


def scene_similarity(scene_features, selected_features) -> float:
    """Mean over a scene's boxes of the best cosine match in the bank.

    Returns -1 when either side is empty, so the first scene always passes
    the similarity gate.
    """
    a = np.atleast_2d(np.asarray(scene_features, dtype=np.float64))
    f = np.atleast_2d(np.asarray(selected_features, dtype=np.float64))
    if a.size == 0 or f.size == 0:
        return -1.0
    na = np.linalg.norm(a, axis=1)
    nf = np.linalg.norm(f, axis=1)
    if np.any(na == 0.0) or np.any(nf == 0.0):
        raise InvariantError("zero-norm feature vector in similarity computation")
    sims = (a @ f.T) / np.outer(na, nf)
    return float(sims.max(axis=1).mean())


def update_feature_bank(bank_features, new_features, m: int, seed: int) -> np.ndarray:
    """Append features; compact to ``m`` representatives when oversized."""
    new = np.atleast_2d(np.asarray(new_features, dtype=np.float64))
    if bank_features is None or np.asarray(bank_features).size == 0:
        merged = new if new.size else np.zeros((0, new.shape[1] if new.ndim == 2 else DESCRIPTOR_DIM))
    elif new.size == 0:
        merged = np.atleast_2d(np.asarray(bank_features, dtype=np.float64))
    else:
        merged = np.concatenate([np.atleast_2d(bank_features), new], axis=0)
    if len(merged) > m:
        merged = representative_features(merged, m, seed)
    return merged


def build_candidate(
    scene: Scene,
    normal_dets: Sequence[Detection],
    cpsp_dets: Sequence[Detection],
    conf_thresh: float = DEFAULT_CONF_THRESH,
    nms_iou: float = DEFAULT_NMS_IOU,
    match_iou: float = DEFAULT_MATCH_IOU,
) -> CandidateScene:
    """Assemble scoring/counting sets and diversity features for one scene."""
    ens = ensemble_merge(normal_dets, cpsp_dets, conf_thresh, nms_iou)
    inter = intersect_predictions(normal_dets, cpsp_dets, match_iou)
    feats = detection_features(scene.points, ens)
    return CandidateScene(scene.scene_id, tuple(ens), tuple(inter), feats)


def select(
    pool: Pool,
    candidates: Mapping[str, CandidateScene],
    classes: ClassSet,
    config: SelectionConfig,
    labeled_counts: Optional[Sequence[int]] = None,
    caps: Optional[np.ndarray] = None,
) -> SelectionResult:
    """Run the budgeted selection loop over the unlabeled pool.

    Caps come either from ``caps`` directly or from ``labeled_counts`` via
    :func:`class_caps`. Every unlabeled scene must have a candidate record.
    Returns the ordered picks plus a replayable event log; when the cursor
    exhausts the pool before the budget is met the result is flagged
    ``exhausted`` instead of relaxing the similarity gate.
    """
    ids = sorted(pool.unlabeled)
    missing = [s for s in ids if s not in candidates]
    if missing:
        raise MissingDataError(f"unlabeled scenes without detections: {missing[:5]}")
    n_classes = len(classes)
    if caps is None:
        if labeled_counts is None:
            raise ConfigError("select needs labeled_counts or explicit caps")
        caps = class_caps(labeled_counts, config.budget_boxes, config.min_class_cap)
    caps = np.asarray(caps, dtype=np.float64)
    if caps.shape != (n_classes,):
        raise ConfigError(f"caps must have one entry per class, got {caps.shape}")

    weights = ClassWeights.uniform(n_classes)
    scores = {s: scene_uncertainty(candidates[s].ensemble, n_classes, weights) for s in ids}
    order = sorted(ids, key=lambda s: (-scores[s], s))

    chosen: list[str] = []
    chosen_set: set[str] = set()
    box_counts = np.zeros(n_classes, dtype=np.int64)
    bank: Optional[np.ndarray] = None
    events: list[dict] = []
    exhausted = False
    idx = 0

    while int(box_counts.sum()) < config.budget_boxes:
        if idx >= len(order):
            exhausted = True
            break
        sid = order[idx]
        cand = candidates[sid]
        sim = -1.0 if bank is None else scene_similarity(cand.features, bank)
        if sim >= config.similarity_threshold:
            events.append(
                {"event": "skip", "scene_id": sid, "similarity": sim,
                 "uncertainty": scores[sid]}
            )
            idx += 1
            continue

        added = np.zeros(n_classes, dtype=np.int64)
        for det in cand.intersection:
            added[det.class_id] += 1
        crossing = []
        if config.class_balance:
            crossing = [
                c
                for c in range(n_classes)
                if box_counts[c] < caps[c] and box_counts[c] + added[c] >= caps[c]
            ]
        box_counts += added
        chosen.append(sid)
        chosen_set.add(sid)
        events.append(
            {
                "event": "accept",
                "scene_id": sid,
                "similarity": sim,
                "uncertainty": scores[sid],
                "boxes_added": {classes.names[c]: int(added[c]) for c in range(n_classes) if added[c]},
                "num_boxes_total": int(box_counts.sum()),
            }
        )
        if len(cand.features):
            bank = update_feature_bank(bank, cand.features, config.feature_bank_size, config.seed)

        if crossing:
            for c in crossing:
                weights = weights.with_reduced(c, config.reduced_class_weight)
                events.append(
                    {
                        "event": "reweight",
                        "class_id": c,
                        "class_name": classes.names[c],
                        "box_count": int(box_counts[c]),
                        "cap": float(caps[c]),
                        "weight": config.reduced_class_weight,
                    }
                )
            remaining = [s for s in order if s not in chosen_set]
            scores = {
                s: scene_uncertainty(candidates[s].ensemble, n_classes, weights)
                for s in remaining
            }
            order = sorted(remaining, key=lambda s: (-scores[s], s))
            idx = 0
            events.append({"event": "resort", "remaining": len(order)})
        else:
            idx += 1

    return SelectionResult(
        chosen=chosen,
        box_counts=box_counts,
        exhausted=exhausted,
        events=events,
        caps=caps,
        final_weights=weights.values,
    )
