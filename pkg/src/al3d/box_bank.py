"""Confident-object box bank: extraction, FP mining, refinement, storage.

The bank stores cropped object point clouds keyed by class, box and an
uncertainty score (entropy; lower is more confident). Refinement resolves
overlapping candidates per scene by keeping the lowest-score member of each
transitive overlap cluster, and retires entries whose scene keeps getting
revisited without any matching confident detection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .clustering import confident_group
from .errors import FormatError, MissingDataError
from .geometry import iou_3d, points_in_box
from .io import sanitize_filename, load_point_cloud, save_point_cloud
from .types import Box3D, Detection, Scene
from .uncertainty import box_entropy

# Crop margin around banked boxes; surface points sit on box boundaries.
CROP_MARGIN = 0.1
# A detection overlapping any verified object at or above this IoU is not a
# false positive.
FP_VERIFIED_IOU = 0.1
DEFAULT_TAU_OVERLAP = 0.3
DEFAULT_STALE_ROUNDS = 2


@dataclass(frozen=True, eq=False)
class BankEntry:
    entry_id: str
    cls: int
    loc: Box3D
    score: float          # uncertainty, lower = more confident
    scene_id: str
    pc: np.ndarray        # (n, 4) float32 crop
    is_fp: bool = False
    last_seen_round: int = 0

    def __post_init__(self):
        pc = np.asarray(self.pc, dtype=np.float32).reshape(-1, 4)
        pc.setflags(write=False)
        object.__setattr__(self, "pc", pc)

    def __eq__(self, other):
        if not isinstance(other, BankEntry):
            return NotImplemented
        return (
            self.entry_id == other.entry_id
            and self.cls == other.cls
            and self.loc == other.loc
            and self.score == other.score
            and self.scene_id == other.scene_id
            and self.is_fp == other.is_fp
            and self.last_seen_round == other.last_seen_round
            and np.array_equal(self.pc, other.pc)
        )

    __hash__ = None


@dataclass(frozen=True)
class BoxBank:
    entries: tuple[BankEntry, ...] = ()
    round: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def extract_confident(
    scene: Scene,
    dets: Sequence[Detection],
    k: int,
    seed: int,
    crop_margin: float = CROP_MARGIN,
    round_idx: int = 0,
) -> list[BankEntry]:
    """Pick the lowest-uncertainty cluster of detections and crop them.

    Uncertainty is per-box entropy; the confident group is the k-means
    cluster with the lowest center. Detections whose crop contains no points
    are dropped (an entry must carry its object's point cloud).
    """
    if len(scene.points) == 0:
        raise MissingDataError(f"scene {scene.scene_id} has no points")
    if not dets:
        return []
    entropies = [box_entropy(d.probs) for d in dets]
    picked = confident_group(entropies, k, seed)
    entries = []
    for i in sorted(int(j) for j in picked):
        det = dets[i]
        idx = points_in_box(scene.points, det.box, crop_margin)
        if len(idx) == 0:
            continue
        entries.append(
            BankEntry(
                entry_id=f"{scene.scene_id}:r{round_idx}:{i}",
                cls=det.class_id,
                loc=det.box,
                score=entropies[i],
                scene_id=scene.scene_id,
                pc=scene.points[idx],
                is_fp=False,
                last_seen_round=round_idx,
            )
        )
    return entries


def false_positive_mask(
    dets: Sequence[Detection],
    verified_boxes: Sequence[Box3D],
    fp_conf_floor: float,
) -> np.ndarray:
    """Which detections are confident yet overlap no verified object."""
    mask = np.zeros(len(dets), dtype=bool)
    for i, det in enumerate(dets):
        if det.score < fp_conf_floor:
            continue
        best = max((iou_3d(det.box, vb) for vb in verified_boxes), default=0.0)
        mask[i] = best < FP_VERIFIED_IOU
    return mask


def mine_false_positives(
    scene: Scene,
    dets: Sequence[Detection],
    fp_conf_floor: float = 0.5,
    verified: Optional[Sequence[Detection]] = None,
    crop_margin: float = CROP_MARGIN,
    round_idx: int = 0,
) -> list[BankEntry]:
    """Bank confident detections that match no verified object.

    ``verified`` defaults to the scene's ground truth; without either there
    is nothing to check against and MissingDataError is raised.
    """
    if verified is None:
        verified = scene.gt
    if verified is None:
        raise MissingDataError(
            f"scene {scene.scene_id}: no ground truth or verified set for FP mining"
        )
    mask = false_positive_mask(dets, [v.box for v in verified], fp_conf_floor)
    entries = []
    for i in np.nonzero(mask)[0]:
        det = dets[int(i)]
        idx = points_in_box(scene.points, det.box, crop_margin)
        entries.append(
            BankEntry(
                entry_id=f"{scene.scene_id}:r{round_idx}:fp{int(i)}",
                cls=det.class_id,
                loc=det.box,
                score=box_entropy(det.probs),
                scene_id=scene.scene_id,
                pc=scene.points[idx],
                is_fp=True,
                last_seen_round=round_idx,
            )
        )
    return entries


def _overlap_clusters(entries: list[BankEntry], tau: float) -> list[list[int]]:
    """Connected components under same-scene IoU >= tau (union-find)."""
    n = len(entries)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if iou_3d(entries[i].loc, entries[j].loc) >= tau:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    return [clusters[r] for r in sorted(clusters)]


def refine(
    bank: BoxBank,
    new_entries: Sequence[BankEntry],
    tau_overlap: float = DEFAULT_TAU_OVERLAP,
    stale_rounds: float = DEFAULT_STALE_ROUNDS,
) -> BoxBank:
    """Merge newly extracted entries into the bank.

    Within each scene (separately for object and FP entries), candidates
    that overlap transitively at IoU >= ``tau_overlap`` form a cluster whose
    lowest-score member survives (ties prefer the banked entry). Survivors
    confirmed or introduced by a new entry carry the new round stamp; bank
    entries in a revisited scene that match nothing keep their stamp and are
    deleted once ``stale_rounds`` rounds have passed since it. Scenes not
    revisited this round are left untouched.
    """
    new_round = bank.round + 1
    revisited = {e.scene_id for e in new_entries}

    by_group: dict[tuple[str, bool], list[tuple[BankEntry, bool]]] = {}
    untouched: list[BankEntry] = []
    for entry in bank.entries:
        if entry.scene_id in revisited:
            by_group.setdefault((entry.scene_id, entry.is_fp), []).append((entry, False))
        else:
            untouched.append(entry)
    for entry in new_entries:
        by_group.setdefault((entry.scene_id, entry.is_fp), []).append((entry, True))

    survivors: list[BankEntry] = list(untouched)
    for key in sorted(by_group, key=lambda k: (k[0], k[1])):
        members = by_group[key]
        entries = [e for e, _ in members]
        is_new = [n for _, n in members]
        for cluster in _overlap_clusters(entries, tau_overlap):
            # lowest score wins; ties prefer banked entries (listed first)
            winner = min(cluster, key=lambda i: (entries[i].score, is_new[i], i))
            entry = entries[winner]
            cluster_has_new = any(is_new[i] for i in cluster)
            if cluster_has_new:
                entry = replace(entry, last_seen_round=new_round)
            elif new_round - entry.last_seen_round >= stale_rounds:
                continue  # revisited repeatedly without confirmation
            survivors.append(entry)

    survivors.sort(key=lambda e: (e.scene_id, e.is_fp, e.entry_id))
    return BoxBank(entries=tuple(survivors), round=new_round)


def persist(bank: BoxBank, directory) -> None:
    """Write the bank as manifest.json plus one binary point file per entry."""
    directory = Path(directory)
    points_dir = directory / "points"
    points_dir.mkdir(parents=True, exist_ok=True)
    manifest_entries = []
    used_names: set[str] = set()
    for entry in bank.entries:
        name = sanitize_filename(entry.entry_id)
        if name in used_names:
            name = f"{name}__{len(used_names)}"
        used_names.add(name)
        rel = f"points/{name}.bin"
        save_point_cloud(directory / rel, entry.pc)
        manifest_entries.append(
            {
                "entry_id": entry.entry_id,
                "cls": entry.cls,
                "box": {
                    "cx": entry.loc.cx, "cy": entry.loc.cy, "cz": entry.loc.cz,
                    "dx": entry.loc.dx, "dy": entry.loc.dy, "dz": entry.loc.dz,
                    "yaw": entry.loc.yaw,
                },
                "score": entry.score,
                "scene_id": entry.scene_id,
                "is_fp": entry.is_fp,
                "last_seen_round": entry.last_seen_round,
                "points_file": rel,
            }
        )
    manifest = {"round": bank.round, "entries": manifest_entries}
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load(directory) -> BoxBank:
    """Inverse of :func:`persist`; bit-exact on points and box parameters."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
        round_idx = int(manifest["round"])
        raw_entries = manifest["entries"]
    except FileNotFoundError as exc:
        raise FormatError(f"{manifest_path}: missing bank manifest") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{manifest_path}: corrupt bank manifest: {exc}") from exc
    entries = []
    for obj in raw_entries:
        try:
            box = Box3D(**{k: float(v) for k, v in obj["box"].items()})
            pc_path = directory / obj["points_file"]
            if not pc_path.exists():
                raise FormatError(f"{manifest_path}: missing point file {obj['points_file']}")
            entries.append(
                BankEntry(
                    entry_id=obj["entry_id"],
                    cls=int(obj["cls"]),
                    loc=box,
                    score=float(obj["score"]),
                    scene_id=obj["scene_id"],
                    pc=load_point_cloud(pc_path),
                    is_fp=bool(obj["is_fp"]),
                    last_seen_round=int(obj["last_seen_round"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{manifest_path}: corrupt bank entry: {exc}") from exc
    return BoxBank(entries=tuple(entries), round=round_idx)


def bank_stats(bank: BoxBank) -> dict:
    """Entry counts per class (objects vs FPs) and score quantiles."""
    per_class: dict[int, int] = {}
    fp_count = 0
    for e in bank.entries:
        if e.is_fp:
            fp_count += 1
        else:
            per_class[e.cls] = per_class.get(e.cls, 0) + 1
    scores = np.array([e.score for e in bank.entries if not e.is_fp], dtype=np.float64)
    quantiles = (
        {q: float(np.quantile(scores, q)) for q in (0.0, 0.25, 0.5, 0.75, 1.0)}
        if len(scores)
        else {}
    )
    return {
        "round": bank.round,
        "total": len(bank.entries),
        "objects_per_class": {str(c): per_class[c] for c in sorted(per_class)},
        "false_positives": fp_count,
        "score_quantiles": {f"{q:.2f}": v for q, v in quantiles.items()},
    }
