"""Pseudo-scene formation: background mining plus bank-object pasting.

Backgrounds are scenes with all (sufficiently confident) detection points
carved out, except boxes explicitly preserved as hard false-positive
negatives. Bank objects are pasted back at their original pose, rejecting
any placement that collides with an already-placed box or with surviving
background points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import AbstractSet, Optional, Sequence

import numpy as np

from .box_bank import BoxBank
from .errors import IoError
from .geometry import (
    DEFAULT_REMOVAL_MARGIN,
    iou_3d,
    points_in_box,
    remove_points_in_boxes,
)
from .io import sanitize_filename, save_detections_jsonl, save_point_cloud
from .types import Detection, Scene, Source, as_points

DEFAULT_REMOVAL_FLOOR = 0.1
PSEUDO_SCENE_SUFFIX = "-pseudo"


@dataclass(frozen=True, eq=False)
class PseudoScene:
    scene_id: str
    points: np.ndarray
    pseudo_labels: tuple[Detection, ...]
    provenance: tuple[tuple[str, str], ...]  # (bank entry id, origin scene id)

    def __post_init__(self):
        pts = as_points(self.points)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


def mine_background(
    scene: Scene,
    dets: Sequence[Detection],
    removal_floor: float = DEFAULT_REMOVAL_FLOOR,
    margin: float = DEFAULT_REMOVAL_MARGIN,
    preserve: AbstractSet[int] = frozenset(),
) -> np.ndarray:
    """Strip object points from a scene, keeping preserved-FP boxes intact.

    Every detection with score >= ``removal_floor`` has its (margin
    inflated) points removed, except indices listed in ``preserve`` whose
    points stay in place as hard negatives.
    """
    boxes = [
        d.box
        for i, d in enumerate(dets)
        if d.score >= removal_floor and i not in preserve
    ]
    return remove_points_in_boxes(scene.points, boxes, margin)


def compose(
    scene_id: str,
    background,
    bank: BoxBank,
    max_objects: int,
    seed: int,
    class_count: int,
) -> PseudoScene:
    """Paste up to ``max_objects`` bank objects into a mined background.

    Candidates are drawn without replacement, class-stratified round-robin
    with a seeded shuffle inside each class. An entry is rejected when its
    box overlaps an already-placed box (any positive 3D IoU) or contains a
    background point. Accepted entries contribute their cropped points and a
    one-hot pseudo-label.
    """
    background = as_points(background)
    rng = np.random.default_rng(seed)

    by_class: dict[int, list] = {}
    for entry in bank.entries:
        if not entry.is_fp:
            by_class.setdefault(entry.cls, []).append(entry)
    queues = []
    for cls in sorted(by_class):
        group = sorted(by_class[cls], key=lambda e: e.entry_id)
        rng.shuffle(group)
        queues.append(group)

    candidates = []
    while queues:
        remaining = []
        for queue in queues:
            candidates.append(queue.pop(0))
            if queue:
                remaining.append(queue)
        queues = remaining

    placed: list = []
    labels: list[Detection] = []
    provenance: list[tuple[str, str]] = []
    for entry in candidates:
        if len(placed) >= max_objects:
            break
        if any(iou_3d(entry.loc, other.loc) > 0.0 for other in placed):
            continue
        if len(points_in_box(background, entry.loc, 0.0)) > 0:
            continue
        placed.append(entry)
        probs = np.zeros(class_count)
        probs[entry.cls] = 1.0
        labels.append(
            Detection(
                class_id=entry.cls,
                probs=probs,
                score=1.0,
                box=entry.loc,
                source=Source.GROUND_TRUTH,
            )
        )
        provenance.append((entry.entry_id, entry.scene_id))

    parts = [background] + [e.pc for e in placed]
    points = np.concatenate([as_points(p) for p in parts], axis=0)
    return PseudoScene(
        scene_id=f"{scene_id}{PSEUDO_SCENE_SUFFIX}",
        points=points,
        pseudo_labels=tuple(labels),
        provenance=tuple(provenance),
    )


def emit_dataset(pseudo_scenes: Sequence[PseudoScene], directory) -> dict:
    """Write pseudo scenes in the standard scene formats plus a manifest."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        manifest_scenes = []
        for ps in pseudo_scenes:
            name = sanitize_filename(ps.scene_id)
            points_file = f"{name}.bin"
            labels_file = f"{name}.jsonl"
            save_point_cloud(directory / points_file, ps.points)
            save_detections_jsonl(directory / labels_file, {ps.scene_id: list(ps.pseudo_labels)})
            manifest_scenes.append(
                {
                    "scene_id": ps.scene_id,
                    "points_file": points_file,
                    "labels_file": labels_file,
                    "provenance": [list(p) for p in ps.provenance],
                }
            )
        manifest = {"scenes": manifest_scenes}
        (directory / "pseudo_manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise IoError(f"failed to emit pseudo-scene dataset under {directory}: {exc}") from exc
    return manifest
