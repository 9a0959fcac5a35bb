"""Core domain types: boxes, detections, scenes, pools, class sets.

All types are immutable values after construction and safe to share across
threads. Validation happens in ``__post_init__`` and raises
:class:`~al3d.errors.InvariantError` on violation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, InvariantError

PROBS_SUM_TOL = 1e-6


class Source(enum.Enum):
    """Which stage produced a detection."""

    NORMAL = "normal"
    CPSP = "cpsp"
    ENSEMBLE = "ensemble"
    INTERSECTION = "intersection"
    SURROGATE = "surrogate"
    GROUND_TRUTH = "ground_truth"


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    y = math.fmod(yaw, 2.0 * math.pi)
    if y <= -math.pi:
        y += 2.0 * math.pi
    elif y > math.pi:
        y -= 2.0 * math.pi
    return y


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center (cx, cy, cz), full extents (dx, dy, dz), yaw.

    Extents are strictly positive; yaw is normalized into (-pi, pi] and
    rotates about the vertical (z) axis.
    """

    cx: float
    cy: float
    cz: float
    dx: float
    dy: float
    dz: float
    yaw: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise InvariantError(f"non-finite box parameter: {vals}")
        if self.dx <= 0 or self.dy <= 0 or self.dz <= 0:
            raise InvariantError(
                f"box extents must be strictly positive, got "
                f"({self.dx}, {self.dy}, {self.dz})"
            )
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def z_range(self) -> tuple[float, float]:
        h = self.dz / 2.0
        return (self.cz - h, self.cz + h)

    def corners_bev(self) -> np.ndarray:
        """Footprint corners in the ground plane, counterclockwise, (4, 2)."""
        hx, hy = self.dx / 2.0, self.dy / 2.0
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw]
        )


def _as_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvariantError("probs must be a nonempty 1-D vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvariantError(f"probs entries must be finite and >= 0: {p}")
    if abs(float(p.sum()) - 1.0) > PROBS_SUM_TOL:
        raise InvariantError(f"probs must sum to 1 +/- {PROBS_SUM_TOL}: sum={p.sum()}")
    return p


@dataclass(frozen=True, eq=False)
class Detection:
    """One predicted (or ground-truth) object.

    ``class_id`` must equal the argmax of ``probs``; ties resolve to the
    lowest class index. ``score`` is the detector confidence in [0, 1].
    """

    class_id: int
    probs: np.ndarray
    score: float
    box: Box3D
    feature: Optional[np.ndarray] = None
    source: Source = Source.NORMAL

    def __post_init__(self):
        p = _as_probs(self.probs)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        if int(np.argmax(p)) != self.class_id:
            raise InvariantError(
                f"class_id {self.class_id} != argmax(probs) {int(np.argmax(p))}"
            )
        if not (0.0 <= self.score <= 1.0) or not math.isfinite(self.score):
            raise InvariantError(f"score must lie in [0, 1], got {self.score}")
        if self.feature is not None:
            f = np.asarray(self.feature, dtype=np.float64)
            if f.ndim != 1 or not np.all(np.isfinite(f)):
                raise InvariantError("feature must be a finite 1-D vector")
            f.setflags(write=False)
            object.__setattr__(self, "feature", f)

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        if self.feature is None or other.feature is None:
            feat_eq = self.feature is None and other.feature is None
        else:
            feat_eq = np.array_equal(self.feature, other.feature)
        return (
            self.class_id == other.class_id
            and self.score == other.score
            and self.box == other.box
            and self.source == other.source
            and np.array_equal(self.probs, other.probs)
            and feat_eq
        )

    __hash__ = None


class RegionKind(enum.Enum):
    IMAGE_RECT = "image_rect"
    BEV_RECT = "bev_rect"


@dataclass(frozen=True, eq=False)
class IgnoreRegion:
    """A do-not-annotate rectangle, either on the camera image or in BEV.

    ``bounds`` is (a_min, a_max, b_min, b_max) for the two axes of the chosen
    plane. Image rectangles need a 3x4 projection matrix to map box centers
    into pixels.
    """

    kind: RegionKind
    bounds: tuple[float, float, float, float]
    projection: Optional[np.ndarray] = None

    def __post_init__(self):
        a0, a1, b0, b1 = self.bounds
        if not (a0 < a1 and b0 < b1):
            raise InvariantError(f"region bounds must satisfy min < max: {self.bounds}")
        if self.projection is not None:
            m = np.asarray(self.projection, dtype=np.float64)
            if m.shape != (3, 4):
                raise InvariantError(f"projection must be 3x4, got {m.shape}")
            object.__setattr__(self, "projection", m)

    def contains_center(self, box: Box3D) -> bool:
        a0, a1, b0, b1 = self.bounds
        if self.kind is RegionKind.BEV_RECT:
            u, v = box.cx, box.cy
        else:
            if self.projection is None:
                raise ConfigError("image_rect ignore region has no projection matrix")
            p = self.projection @ np.array([box.cx, box.cy, box.cz, 1.0])
            if p[2] <= 0:  # behind the camera
                return False
            u, v = p[0] / p[2], p[1] / p[2]
        return a0 <= u <= a1 and b0 <= v <= b1


def as_points(points) -> np.ndarray:
    """Coerce to an (N, 4) float32 array of x, y, z, intensity."""
    pts = np.asarray(points, dtype=np.float32)
    if pts.size == 0:
        return pts.reshape(0, 4)
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise InvariantError(f"points must be (N, 3) or (N, 4), got {pts.shape}")
    if pts.shape[1] == 3:
        pts = np.concatenate([pts, np.zeros((len(pts), 1), dtype=np.float32)], axis=1)
    return pts


@dataclass(frozen=True, eq=False)
class Scene:
    """A point cloud with per-model detections and optional ground truth."""

    scene_id: str
    points: np.ndarray
    detections_by_model: Mapping[str, Sequence[Detection]] = field(default_factory=dict)
    gt: Optional[Sequence[Detection]] = None
    ignore_regions: Optional[Sequence[IgnoreRegion]] = None

    def __post_init__(self):
        if not self.scene_id:
            raise InvariantError("scene_id must be nonempty")
        pts = as_points(self.points)
        if not np.all(np.isfinite(pts)):
            raise InvariantError(f"scene {self.scene_id} has non-finite points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class Pool:
    """Partition of scene ids into labeled and unlabeled sets."""

    labeled: frozenset[str]
    unlabeled: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "labeled", frozenset(self.labeled))
        object.__setattr__(self, "unlabeled", frozenset(self.unlabeled))
        overlap = self.labeled & self.unlabeled
        if overlap:
            raise InvariantError(f"labeled and unlabeled overlap: {sorted(overlap)}")

    def move_to_labeled(self, scene_ids: Iterable[str]) -> "Pool":
        ids = frozenset(scene_ids)
        missing = ids - self.unlabeled
        if missing:
            raise InvariantError(f"not in unlabeled pool: {sorted(missing)}")
        return Pool(self.labeled | ids, self.unlabeled - ids)


@dataclass(frozen=True)
class ClassSet:
    """Ordered, unique class names."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        if not names or len(set(names)) != len(names) or any(not n for n in names):
            raise InvariantError(f"class names must be unique and nonempty: {names}")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


def filter_ignore_frames(
    scenes: Sequence[Scene],
    detections: Mapping[str, Sequence[Detection]],
    max_hits: int = 2,
) -> list[str]:
    """Drop frames dominated by ignore regions.

    A scene is dropped iff strictly more than ``max_hits`` of its predicted
    box centers fall inside the union of its ignore regions. Scenes without
    regions are always kept. Containment uses the box center only.
    """
    kept = []
    for scene in scenes:
        regions = scene.ignore_regions or ()
        if not regions:
            kept.append(scene.scene_id)
            continue
        hits = 0
        for det in detections.get(scene.scene_id, ()):
            if any(r.contains_center(det.box) for r in regions):
                hits += 1
        if hits <= max_hits:
            kept.append(scene.scene_id)
    return kept
