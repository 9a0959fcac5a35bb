"""File formats: point cloud binaries, detection JSONL, pool manifests.

Point clouds are little-endian float32 with stride 4 (x, y, z, intensity),
with a CSV fallback of 3-4 numeric columns. Detections are one JSON object
per line. Pool manifests are a single JSON object with ``labeled``,
``unlabeled`` and ``classes`` lists.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import FormatError, ParseError
from .types import Box3D, ClassSet, Detection, IgnoreRegion, Pool, RegionKind, Source

POINT_STRIDE_BYTES = 16  # 4 x float32

_BOX_KEYS = ("cx", "cy", "cz", "dx", "dy", "dz", "yaw")


def load_point_cloud(path) -> np.ndarray:
    """Read a point cloud as an (N, 4) float32 array.

    ``.csv`` files may carry 3 or 4 columns (missing intensity is zero
    filled); anything else is treated as raw float32 binary.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv_points(path)
    raw = path.read_bytes()
    if len(raw) % POINT_STRIDE_BYTES != 0:
        raise FormatError(
            f"{path}: byte length {len(raw)} not divisible by {POINT_STRIDE_BYTES}"
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).copy()
    if not np.all(np.isfinite(pts)):
        raise FormatError(f"{path}: non-finite point coordinates")
    return pts


def _load_csv_points(path: Path) -> np.ndarray:
    text = path.read_text().strip()
    if not text:
        return np.zeros((0, 4), dtype=np.float32)
    try:
        rows = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable CSV point file: {exc}") from exc
    if rows.shape[1] not in (3, 4):
        raise FormatError(f"{path}: expected 3 or 4 columns, got {rows.shape[1]}")
    if not np.all(np.isfinite(rows)):
        raise FormatError(f"{path}: non-finite point coordinates")
    pts = rows.astype(np.float32)
    if pts.shape[1] == 3:
        pts = np.concatenate([pts, np.zeros((len(pts), 1), np.float32)], axis=1)
    return pts


def save_point_cloud(path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float32).reshape(-1, 4))
    Path(path).write_bytes(pts.astype("<f4").tobytes())


def _detection_from_obj(obj: dict, source: Source) -> tuple[str, Detection]:
    try:
        scene_id = obj["scene_id"]
        class_id = int(obj["class"])
        score = float(obj["score"])
        probs = np.asarray(obj["probs"], dtype=np.float64)
        box_obj = obj["box"]
        box = Box3D(*(float(box_obj[k]) for k in _BOX_KEYS))
    except KeyError as exc:
        raise ParseError(f"detection record missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed detection record: {exc}") from exc
    total = float(probs.sum()) if probs.size else 0.0
    if probs.size and abs(total - 1.0) <= 1e-4:
        probs = probs / total
    feature = obj.get("feature")
    if feature is not None:
        feature = np.asarray(feature, dtype=np.float64)
    det = Detection(
        class_id=class_id,
        probs=probs,
        score=score,
        box=box,
        feature=feature,
        source=source,
    )
    return scene_id, det


def parse_detection_record(line: str, source: Source = Source.NORMAL) -> Detection:
    """Parse one JSONL detection record.

    Probability vectors within 1e-4 of summing to one are renormalized;
    larger deviations (and nonpositive extents) surface as InvariantError,
    malformed JSON as ParseError.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError("detection record must be a JSON object")
    return _detection_from_obj(obj, source)[1]


def serialize_detection(det: Detection, scene_id: str) -> str:
    """Inverse of :func:`parse_detection_record` (one line, no newline)."""
    obj = {
        "scene_id": scene_id,
        "class": det.class_id,
        "score": det.score,
        "probs": [float(p) for p in det.probs],
        "box": {k: float(getattr(det.box, k)) for k in _BOX_KEYS},
    }
    if det.feature is not None:
        obj["feature"] = [float(v) for v in det.feature]
    return json.dumps(obj)


def load_detections_jsonl(path, source: Source = Source.NORMAL) -> dict[str, list[Detection]]:
    """Load a JSONL file grouped by scene_id (file order preserved)."""
    by_scene: dict[str, list[Detection]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            scene_id, det = _detection_from_obj(obj, source)
            by_scene.setdefault(scene_id, []).append(det)
    return by_scene


def save_detections_jsonl(path, dets_by_scene: Mapping[str, Sequence[Detection]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for scene_id in dets_by_scene:
            for det in dets_by_scene[scene_id]:
                fh.write(serialize_detection(det, scene_id) + "\n")


def load_pool_manifest(path) -> tuple[Pool, ClassSet]:
    try:
        obj = json.loads(Path(path).read_text())
        pool = Pool(frozenset(obj["labeled"]), frozenset(obj["unlabeled"]))
        classes = ClassSet(tuple(obj["classes"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad pool manifest: {exc}") from exc
    return pool, classes


def save_pool_manifest(path, pool: Pool, classes: ClassSet) -> None:
    obj = {
        "labeled": sorted(pool.labeled),
        "unlabeled": sorted(pool.unlabeled),
        "classes": list(classes.names),
    }
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_ignore_regions(path) -> dict[str, list[IgnoreRegion]]:
    """Read a JSON map of scene_id -> list of ignore region specs."""
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    out: dict[str, list[IgnoreRegion]] = {}
    for scene_id, specs in obj.items():
        regions = []
        for spec in specs:
            try:
                kind = RegionKind(spec["kind"])
                bounds = tuple(float(v) for v in spec["bounds"])
                proj = spec.get("projection")
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: bad region spec for {scene_id}: {exc}") from exc
            regions.append(IgnoreRegion(kind, bounds, None if proj is None else np.asarray(proj)))
        out[scene_id] = regions
    return out


def sanitize_filename(name: str) -> str:
    """Make an identifier safe to use as a file name."""
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def scene_points_path(scene_dir, scene_id: str) -> Optional[Path]:
    """Locate a scene's point file (.bin preferred, .csv fallback)."""
    base = Path(scene_dir) / sanitize_filename(scene_id)
    for suffix in (".bin", ".csv"):
        p = base.with_suffix(suffix)
        if p.exists():
            return p
    return None
