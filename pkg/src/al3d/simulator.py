"""Desk-scale synthetic world, surrogate detector, and multi-round harness.

Worlds are seeded: ground-truth boxes never overlap, each object carries
surface points sampled on the faces visible from a virtual sensor, and
point counts fall off with range. The surrogate detector draws a modeled
match probability per object (class-confusion times a localization-success
model) and then *realizes* exactly that probability, so its "calibrated"
score mode is calibrated by construction while the overconfident and
underconfident modes distort the reported score only.

The round harness mirrors a multi-round annotation protocol: score the
unlabeled pool with a two-model ensemble, select under a box budget, reveal
ground truth, refresh the confident-object bank, compose pseudo scenes, and
optionally tighten the second model per a configured schedule standing in
for retraining. A random-selection baseline runs on the same seeds with the
same box accounting.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import box_bank as bank_ops
from ._parallel import map_ordered
from .box_bank import BoxBank
from .errors import ConfigError
from .geometry import iou_3d, points_in_box
from .io import save_detections_jsonl, save_point_cloud, save_pool_manifest, sanitize_filename
from .pseudo_scene import compose, mine_background
from .seeding import derive_seed, rng_for
from .selection import CandidateScene, SelectionConfig, build_candidate, select
from .types import Box3D, ClassSet, Detection, Pool, Scene, Source
from .uncertainty import scene_uncertainty

log = logging.getLogger(__name__)

SENSOR_POS = np.array([0.0, 0.0, 1.6])

# (length, width, height) templates cycled over class indices
DEFAULT_CLASS_SIZES = (
    (4.2, 1.8, 1.6),
    (0.8, 0.8, 1.75),
    (1.8, 0.6, 1.7),
    (6.5, 2.5, 2.8),
    (0.6, 0.6, 1.1),
)

# Localization-success model: zero noise means guaranteed success, sparse
# objects are harder, and a per-object jitter spreads difficulty so scores
# cover the whole confidence range.
LOC_SIGMA_SCALE = 0.45
LOC_YAW_SCALE = 0.6
LOC_POINT_HARDNESS = 6.0
LOC_JITTER_RANGE = (0.4, 2.2)
PROB_BLEND = 0.85  # how strongly modeled uncertainty smears class probs
MATCH_IOU_TARGET = 0.5


class CalibrationMode(enum.Enum):
    CALIBRATED = "calibrated"
    OVERCONFIDENT = "overconfident"
    UNDERCONFIDENT = "underconfident"


@dataclass(frozen=True)
class WorldConfig:
    """Synthetic world layout; everything derives from ``seed``."""

    n_scenes: int
    class_mix: tuple[float, ...]
    objects_per_scene: tuple[int, int] = (4, 10)
    extent: float = 40.0
    min_range: float = 3.0
    points_near: int = 220
    points_falloff: float = 25.0
    min_object_points: int = 6
    background_points: int = 1200
    clutter_blobs: int = 5
    blob_points: int = 25
    size_jitter: float = 0.1
    class_sizes: Optional[tuple[tuple[float, float, float], ...]] = None
    class_names: Optional[tuple[str, ...]] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ConfigError("n_scenes must be >= 1")
        if not self.class_mix or any(f <= 0 for f in self.class_mix):
            raise ConfigError(f"class_mix frequencies must be positive: {self.class_mix}")
        lo, hi = self.objects_per_scene
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad objects_per_scene range: {self.objects_per_scene}")

    @property
    def mix(self) -> np.ndarray:
        m = np.asarray(self.class_mix, dtype=np.float64)
        return m / m.sum()

    @property
    def n_classes(self) -> int:
        return len(self.class_mix)

    def classes(self) -> ClassSet:
        if self.class_names is not None:
            return ClassSet(tuple(self.class_names))
        return ClassSet(tuple(f"class_{i}" for i in range(self.n_classes)))

    def size_template(self, class_id: int) -> tuple[float, float, float]:
        table = self.class_sizes or DEFAULT_CLASS_SIZES
        return table[class_id % len(table)]


@dataclass(frozen=True)
class DetectorSkill:
    """Behavior of a surrogate detector over a class set."""

    recall_max: tuple[float, ...]
    recall_n50: tuple[float, ...]   # in-box points at which recall halves; <=0 = flat
    sigma_xyz: float
    sigma_yaw: float
    confusion: tuple[tuple[float, ...], ...]
    fp_rate: float
    calibration: CalibrationMode = CalibrationMode.CALIBRATED
    seed: int = 0

    def __post_init__(self):
        if any(not (0.0 <= r <= 1.0) for r in self.recall_max):
            raise ConfigError(f"recall values must lie in [0, 1]: {self.recall_max}")
        if self.sigma_xyz < 0 or self.sigma_yaw < 0 or self.fp_rate < 0:
            raise ConfigError("noise and FP parameters must be nonnegative")
        for row in self.confusion:
            if abs(sum(row) - 1.0) > 1e-9 or any(p < 0 for p in row):
                raise ConfigError(f"confusion rows must be distributions: {row}")
        if len(self.confusion) != len(self.recall_max) or len(self.recall_n50) != len(self.recall_max):
            raise ConfigError("per-class skill fields must agree in length")

    @classmethod
    def perfect(cls, n_classes: int, seed: int = 0) -> "DetectorSkill":
        eye = tuple(
            tuple(1.0 if i == j else 0.0 for j in range(n_classes))
            for i in range(n_classes)
        )
        return cls(
            recall_max=(1.0,) * n_classes,
            recall_n50=(0.0,) * n_classes,
            sigma_xyz=0.0,
            sigma_yaw=0.0,
            confusion=eye,
            fp_rate=0.0,
            calibration=CalibrationMode.CALIBRATED,
            seed=seed,
        )

    @property
    def n_classes(self) -> int:
        return len(self.recall_max)


@dataclass(frozen=True)
class SkillSchedule:
    """Proxy for retraining: skill tightens with the labeled box count."""

    recall_gain_per_box: float = 0.0
    recall_cap: float = 0.97
    sigma_shrink_per_box: float = 0.0

    def apply(self, skill: DetectorSkill, labeled_boxes: int) -> DetectorSkill:
        if self.recall_gain_per_box == 0.0 and self.sigma_shrink_per_box == 0.0:
            return skill
        gained = tuple(
            min(self.recall_cap, r + self.recall_gain_per_box * labeled_boxes)
            for r in skill.recall_max
        )
        shrink = 1.0 + self.sigma_shrink_per_box * labeled_boxes
        return replace(
            skill,
            recall_max=gained,
            sigma_xyz=skill.sigma_xyz / shrink,
            sigma_yaw=skill.sigma_yaw / shrink,
        )


# ---------------------------------------------------------------------------
# world generation


_FACES = (
    # (normal axis, sign, u axis, v axis)
    (0, 1.0, 1, 2),
    (0, -1.0, 1, 2),
    (1, 1.0, 0, 2),
    (1, -1.0, 0, 2),
    (2, 1.0, 0, 1),
    (2, -1.0, 0, 1),
)


def _sample_surface_points(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the box faces visible from the virtual sensor."""
    half = np.array([box.dx, box.dy, box.dz]) / 2.0
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    center = np.array([box.cx, box.cy, box.cz])

    visible = []
    weights = []
    for axis, sign, ua, va in _FACES:
        normal_local = np.zeros(3)
        normal_local[axis] = sign
        normal_world = rot @ normal_local
        face_center = center + rot @ (normal_local * half[axis])
        if float(normal_world @ (SENSOR_POS - face_center)) <= 1e-9:
            continue
        visible.append((axis, sign, ua, va))
        weights.append(2.0 * half[ua] * 2.0 * half[va])
    if not visible:
        visible = [_FACES[0]]
        weights = [1.0]
    weights = np.asarray(weights)
    choice = rng.choice(len(visible), size=n, p=weights / weights.sum())

    local = np.empty((n, 3))
    for k, (axis, sign, ua, va) in enumerate(visible):
        rows = choice == k
        m = int(np.count_nonzero(rows))
        if not m:
            continue
        coords = np.zeros((m, 3))
        coords[:, axis] = sign * half[axis]
        coords[:, ua] = rng.uniform(-half[ua], half[ua], m)
        coords[:, va] = rng.uniform(-half[va], half[va], m)
        local[rows] = coords
    local *= 0.998  # keep strictly inside the box despite float rotation
    world = local @ rot.T + center
    intensity = rng.uniform(0.0, 1.0, (n, 1))
    return np.concatenate([world, intensity], axis=1).astype(np.float32)


def _one_hot(class_id: int, n_classes: int) -> np.ndarray:
    p = np.zeros(n_classes)
    p[class_id] = 1.0
    return p


def _sample_position(rng: np.random.Generator, cfg: WorldConfig) -> tuple[float, float]:
    r = math.sqrt(rng.uniform(cfg.min_range**2, cfg.extent**2))
    theta = rng.uniform(-math.pi, math.pi)
    return r * math.cos(theta), r * math.sin(theta)


def _gen_scene(config: WorldConfig, index: int) -> Scene:
    n_classes = config.n_classes
    mix = config.mix
    rng = rng_for(config.seed, "scene", index)
    scene_id = f"scene_{index:05d}"
    lo, hi = config.objects_per_scene
    n_obj = int(rng.integers(lo, hi + 1))

    boxes: list[Box3D] = []
    class_ids: list[int] = []
    for _ in range(n_obj):
        cls = int(rng.choice(n_classes, p=mix))
        length, width, height = config.size_template(cls)
        jit = 1.0 + config.size_jitter * rng.uniform(-1.0, 1.0, 3)
        dx, dy, dz = length * jit[0], width * jit[1], height * jit[2]
        placed = None
        for _attempt in range(100):
            x, y = _sample_position(rng, config)
            yaw = rng.uniform(-math.pi, math.pi)
            cand = Box3D(x, y, dz / 2.0, dx, dy, dz, yaw)
            if all(iou_3d(cand, b) == 0.0 for b in boxes):
                placed = cand
                break
        if placed is None:
            log.warning("%s: dropped an object, no overlap-free placement", scene_id)
            continue
        boxes.append(placed)
        class_ids.append(cls)

    parts = []
    if config.background_points:
        xy = rng.uniform(-config.extent, config.extent, (config.background_points, 2))
        z = rng.uniform(-0.05, 0.3, (config.background_points, 1))
        inten = rng.uniform(0.0, 1.0, (config.background_points, 1))
        parts.append(np.concatenate([xy, z, inten], axis=1).astype(np.float32))
    for _ in range(config.clutter_blobs):
        bx, by = _sample_position(rng, config)
        xy = rng.normal([bx, by], 0.35, (config.blob_points, 2))
        z = rng.uniform(0.0, 1.4, (config.blob_points, 1))
        inten = rng.uniform(0.0, 1.0, (config.blob_points, 1))
        parts.append(np.concatenate([xy, z, inten], axis=1).astype(np.float32))
    for box in boxes:
        box_range = math.hypot(box.cx, box.cy)
        n_pts = max(
            config.min_object_points,
            int(round(config.points_near / (1.0 + (box_range / config.points_falloff) ** 2))),
        )
        parts.append(_sample_surface_points(box, n_pts, rng))

    points = (
        np.concatenate(parts, axis=0) if parts else np.zeros((0, 4), dtype=np.float32)
    )
    gt = [
        Detection(
            class_id=cls,
            probs=_one_hot(cls, n_classes),
            score=1.0,
            box=box,
            source=Source.GROUND_TRUTH,
        )
        for cls, box in zip(class_ids, boxes)
    ]
    return Scene(scene_id=scene_id, points=points, gt=gt)


def gen_world(config: WorldConfig, threads: int = 1) -> list[Scene]:
    """Generate seeded scenes with non-overlapping ground truth.

    Each scene derives its own generator from (seed, index), so the result
    is identical whatever the thread count.
    """
    return map_ordered(lambda i: _gen_scene(config, i), range(config.n_scenes), threads)


# ---------------------------------------------------------------------------
# surrogate detector


def _mode_score(q: float, mode: CalibrationMode) -> float:
    if mode is CalibrationMode.OVERCONFIDENT:
        return min(1.0, (1.0 + q) / 2.0)
    if mode is CalibrationMode.UNDERCONFIDENT:
        return q / 2.0
    return q


def _blend_probs(pred: int, q: float, n_classes: int) -> np.ndarray:
    """Class probs with argmax ``pred`` whose entropy grows as q drops."""
    u = (1.0 - q) * PROB_BLEND
    probs = np.full(n_classes, u / n_classes)
    probs[pred] += 1.0 - u
    return probs


def _loc_success_prob(skill: DetectorSkill, n_points: int, rng: np.random.Generator) -> float:
    severity = (skill.sigma_xyz / LOC_SIGMA_SCALE) ** 2 + (
        skill.sigma_yaw / LOC_YAW_SCALE
    ) ** 2
    hardness = 1.0 + LOC_POINT_HARDNESS / (n_points + 1.0)
    jitter = float(rng.uniform(*LOC_JITTER_RANGE))
    return math.exp(-severity * hardness * jitter)


def _perturb_within(box: Box3D, skill: DetectorSkill, rng: np.random.Generator) -> Box3D:
    """Noisy copy constrained to keep IoU >= 0.5 with the original."""
    for attempt in range(60):
        scale = 0.5 ** (attempt // 10)
        d = rng.normal(0.0, skill.sigma_xyz * scale, 3)
        dyaw = float(rng.normal(0.0, skill.sigma_yaw * scale))
        cand = Box3D(
            box.cx + d[0], box.cy + d[1], box.cz + d[2],
            box.dx, box.dy, box.dz, box.yaw + dyaw,
        )
        if iou_3d(cand, box) >= MATCH_IOU_TARGET:
            return cand
    return box


def _displace_away(box: Box3D, gt_boxes: Sequence[Box3D], rng: np.random.Generator) -> Box3D:
    """Shift a box into a near miss that cannot match any ground truth.

    Localization failures in practice are near misses, not teleports; the
    box slides outward just far enough that its IoU against every ground
    truth stays clear of the 0.5 match floor.
    """
    theta = rng.uniform(-math.pi, math.pi)
    step = 0.3 * (box.dx + box.dy)
    cand = box
    for _ in range(20):
        cand = Box3D(
            cand.cx + step * math.cos(theta), cand.cy + step * math.sin(theta),
            cand.cz, cand.dx, cand.dy, cand.dz, cand.yaw,
        )
        if all(iou_3d(cand, g) < 0.45 for g in gt_boxes):
            return cand
        step *= 1.5
    return cand


def surrogate_detect(scene: Scene, skill: DetectorSkill) -> list[Detection]:
    """Emit detections for a scene, deterministic per (scene_id, skill seed).

    Each ground-truth object is detected with a probability from the recall
    curve. A detected object draws its predicted class from the confusion
    row and a localization success from the point-count-aware noise model;
    the modeled match probability q = P(class correct) * P(loc success) is
    realized exactly, and the reported score is q passed through the
    calibration mode. False positives are planted on existing clutter points
    with small modeled probabilities.
    """
    rng = rng_for(skill.seed, "detect", scene.scene_id)
    n_classes = skill.n_classes
    gt = list(scene.gt or ())
    gt_boxes = [g.box for g in gt]
    dets: list[Detection] = []

    for g in gt:
        cls = g.class_id
        n_in = len(points_in_box(scene.points, g.box, 0.0))
        r_max = skill.recall_max[cls]
        n50 = skill.recall_n50[cls]
        p_detect = r_max if n50 <= 0 else r_max * n_in / (n_in + n50)
        if rng.random() >= p_detect:
            continue
        pred = int(rng.choice(n_classes, p=skill.confusion[cls]))
        p_loc = _loc_success_prob(skill, n_in, rng)
        loc_ok = rng.random() < p_loc
        q = skill.confusion[cls][cls] * p_loc
        if loc_ok:
            box = _perturb_within(g.box, skill, rng)
        else:
            box = _displace_away(g.box, gt_boxes, rng)
        dets.append(
            Detection(
                class_id=pred,
                probs=_blend_probs(pred, q, n_classes),
                score=_mode_score(q, skill.calibration),
                box=box,
                source=Source.SURROGATE,
            )
        )

    if skill.fp_rate > 0 and len(scene.points):
        n_fp = int(rng.poisson(skill.fp_rate))
        for j in range(n_fp):
            cls = int(rng.integers(n_classes))
            length, width, height = DEFAULT_CLASS_SIZES[cls % len(DEFAULT_CLASS_SIZES)]
            placed = None
            for _ in range(50):
                anchor = scene.points[int(rng.integers(len(scene.points)))]
                cand = Box3D(
                    float(anchor[0]), float(anchor[1]), height / 2.0,
                    length, width, height, rng.uniform(-math.pi, math.pi),
                )
                if all(iou_3d(cand, g) < 0.05 for g in gt_boxes):
                    placed = cand
                    break
            if placed is None:
                continue
            q_fp = float(rng.uniform(0.01, 0.08))
            # FP class beliefs stay moderately peaked: clutter misread as an
            # object still looks like one class, even at a junk score.
            u_fp = float(rng.uniform(0.2, 0.5))
            probs = np.full(n_classes, u_fp / n_classes)
            probs[cls] += 1.0 - u_fp
            dets.append(
                Detection(
                    class_id=cls,
                    probs=probs,
                    score=_mode_score(q_fp, skill.calibration),
                    box=placed,
                    source=Source.SURROGATE,
                )
            )
    return dets


# ---------------------------------------------------------------------------
# multi-round harness


@dataclass(frozen=True)
class HarnessConfig:
    """Protocol knobs for the multi-round loop."""

    initial_boxes: int = 40
    seed: int = 0
    conf_thresh: float = 0.7
    nms_iou: float = 0.5
    # Cross-model matching: two independently noisy detectors agree on an
    # object well below the 0.5 same-model convention.
    match_iou: float = 0.35
    bank_k: int = 2
    tau_overlap: float = 0.3
    stale_rounds: int = 2
    fp_conf_floor: float = 0.5
    removal_floor: float = 0.1
    pseudo_scenes_per_round: int = 3
    max_paste_objects: int = 10
    run_random_baseline: bool = True
    schedule: SkillSchedule = field(default_factory=SkillSchedule)


@dataclass
class RoundsReport:
    classes: tuple[str, ...]
    initial: dict
    rounds: list[dict]
    n_rounds: int
    exhausted: bool

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "initial": self.initial,
            "rounds": self.rounds,
            "n_rounds": self.n_rounds,
            "exhausted": self.exhausted,
        }

    def csv_rows(self) -> list[list]:
        header = (
            ["round", "method", "scenes_selected", "boxes_counted", "mean_entropy", "exhausted"]
            + [f"gt_{name}" for name in self.classes]
            + [f"cum_gt_{name}" for name in self.classes]
        )
        rows: list[list] = [header]
        for rec in self.rounds:
            for method in ("cal", "random"):
                m = rec.get(method)
                if m is None:
                    continue
                rows.append(
                    [
                        rec["round"],
                        method,
                        len(m["scenes"]),
                        m["boxes_counted"],
                        repr(m["entropy_mean"]),
                        m["exhausted"],
                    ]
                    + [m["gt_added_per_class"][name] for name in self.classes]
                    + [m["cumulative_gt_per_class"][name] for name in self.classes]
                )
        return rows


def _gt_class_counts(scene: Scene, n_classes: int) -> np.ndarray:
    counts = np.zeros(n_classes, dtype=np.int64)
    for g in scene.gt or ():
        counts[g.class_id] += 1
    return counts


class _Trajectory:
    """Mutable per-method state inside run_rounds."""

    def __init__(self, pool: Pool, labeled_counts: np.ndarray):
        self.pool = pool
        self.labeled_counts = labeled_counts.copy()


def _detect_cached(cache, scene: Scene, skill: DetectorSkill) -> list[Detection]:
    key = (scene.scene_id, skill)
    if key not in cache:
        cache[key] = surrogate_detect(scene, skill)
    return cache[key]


def initial_pool(scenes: Sequence[Scene], n_classes: int, initial_boxes: int, seed: int) -> Pool:
    """Randomly seed the labeled pool until it holds enough boxes."""
    ids = sorted(s.scene_id for s in scenes)
    by_id = {s.scene_id: s for s in scenes}
    rng = rng_for(seed, "init")
    order = list(ids)
    rng.shuffle(order)
    labeled: list[str] = []
    total = 0
    for sid in order:
        if total >= initial_boxes and labeled:
            break
        labeled.append(sid)
        total += int(_gt_class_counts(by_id[sid], n_classes).sum())
    return Pool(frozenset(labeled), frozenset(ids) - frozenset(labeled))


def run_rounds(
    scenes: Sequence[Scene],
    skills: Mapping[str, DetectorSkill],
    selection_config: SelectionConfig,
    n_rounds: int,
    harness: HarnessConfig = HarnessConfig(),
) -> RoundsReport:
    """Run the annotate-select loop for ``n_rounds`` rounds.

    ``skills`` must provide "normal" and "cpsp" detectors. Ground truth of
    selected scenes is revealed by moving them to the labeled pool. Returns
    per-round statistics for the budgeted selector and, unless disabled, a
    random baseline consuming the identical budget accounting on the same
    initial pool.
    """
    if "normal" not in skills or "cpsp" not in skills:
        raise ConfigError('skills must contain "normal" and "cpsp"')
    by_id = {s.scene_id: s for s in scenes}
    classes = None
    n_classes = skills["normal"].n_classes
    class_names = tuple(f"class_{i}" for i in range(n_classes))
    classes = ClassSet(class_names)

    pool0 = initial_pool(scenes, n_classes, harness.initial_boxes, harness.seed)
    init_counts = np.zeros(n_classes, dtype=np.int64)
    for sid in pool0.labeled:
        init_counts += _gt_class_counts(by_id[sid], n_classes)

    initial_stats = {
        "labeled_scenes": len(pool0.labeled),
        "unlabeled_scenes": len(pool0.unlabeled),
        "labeled_boxes_per_class": {
            class_names[c]: int(init_counts[c]) for c in range(n_classes)
        },
        "labeled_boxes_total": int(init_counts.sum()),
    }

    methods = ["cal"] + (["random"] if harness.run_random_baseline else [])
    trajectories = {m: _Trajectory(pool0, init_counts) for m in methods}
    bank = BoxBank()
    cache: dict = {}
    rounds: list[dict] = []
    any_exhausted = False

    for round_idx in range(1, n_rounds + 1):
        record: dict = {"round": round_idx}
        cal_cpsp_skill = None
        for method in methods:
            traj = trajectories[method]
            labeled_total = int(traj.labeled_counts.sum())
            cpsp_skill = harness.schedule.apply(skills["cpsp"], labeled_total)
            if method == "cal":
                cal_cpsp_skill = cpsp_skill
            unlabeled = sorted(traj.pool.unlabeled)
            candidates: dict[str, CandidateScene] = {}
            for sid in unlabeled:
                scene = by_id[sid]
                nd = _detect_cached(cache, scene, skills["normal"])
                cd = _detect_cached(cache, scene, cpsp_skill)
                candidates[sid] = build_candidate(
                    scene, nd, cd,
                    harness.conf_thresh, harness.nms_iou, harness.match_iou,
                )

            if method == "cal":
                result = select(
                    traj.pool, candidates, classes, selection_config,
                    labeled_counts=traj.labeled_counts,
                )
                chosen = result.chosen
                counted = result.box_counts
                exhausted = result.exhausted
                events = result.events
            else:
                rng = rng_for(harness.seed, "baseline", round_idx)
                order = list(unlabeled)
                rng.shuffle(order)
                chosen = []
                counted = np.zeros(n_classes, dtype=np.int64)
                for sid in order:
                    if int(counted.sum()) >= selection_config.budget_boxes:
                        break
                    chosen.append(sid)
                    for det in candidates[sid].intersection:
                        counted[det.class_id] += 1
                exhausted = int(counted.sum()) < selection_config.budget_boxes
                events = []

            entropies = [
                scene_uncertainty(candidates[sid].ensemble, n_classes)
                for sid in chosen
            ]
            gt_added = np.zeros(n_classes, dtype=np.int64)
            for sid in chosen:
                gt_added += _gt_class_counts(by_id[sid], n_classes)
            traj.pool = traj.pool.move_to_labeled(chosen)
            traj.labeled_counts += gt_added
            any_exhausted = any_exhausted or exhausted

            record[method] = {
                "scenes": chosen,
                "boxes_counted": int(counted.sum()),
                "boxes_counted_per_class": {
                    class_names[c]: int(counted[c]) for c in range(n_classes)
                },
                "gt_added_per_class": {
                    class_names[c]: int(gt_added[c]) for c in range(n_classes)
                },
                "cumulative_gt_per_class": {
                    class_names[c]: int(traj.labeled_counts[c]) for c in range(n_classes)
                },
                "entropy_mean": float(np.mean(entropies)) if entropies else 0.0,
                "entropy_sum": float(np.sum(entropies)) if entropies else 0.0,
                "n_selected": len(chosen),
                "exhausted": exhausted,
            }
            if method == "cal":
                record["cal"]["events"] = events

        # confident-object bank and pseudo scenes follow the selector's pool
        traj = trajectories["cal"]
        new_entries = []
        remaining = sorted(traj.pool.unlabeled)
        for sid in remaining:
            scene = by_id[sid]
            cd = _detect_cached(cache, scene, cal_cpsp_skill)
            if not cd or not len(scene.points):
                continue
            new_entries.extend(
                bank_ops.extract_confident(
                    scene, cd, harness.bank_k,
                    seed=derive_seed(harness.seed, "bank", round_idx, sid),
                    round_idx=round_idx,
                )
            )
            new_entries.extend(
                bank_ops.mine_false_positives(
                    scene, cd, harness.fp_conf_floor, round_idx=round_idx,
                )
            )
        bank = bank_ops.refine(bank, new_entries, harness.tau_overlap, harness.stale_rounds)

        pseudo_count = 0
        pseudo_labels = 0
        if remaining and harness.pseudo_scenes_per_round > 0:
            rng = rng_for(harness.seed, "pseudo", round_idx)
            take = min(harness.pseudo_scenes_per_round, len(remaining))
            picked = [remaining[int(i)] for i in rng.choice(len(remaining), take, replace=False)]
            for sid in sorted(picked):
                scene = by_id[sid]
                cd = _detect_cached(cache, scene, cal_cpsp_skill)
                fp_mask = bank_ops.false_positive_mask(
                    cd, [g.box for g in scene.gt or ()], harness.fp_conf_floor
                )
                background = mine_background(
                    scene, cd, harness.removal_floor,
                    preserve=set(np.nonzero(fp_mask)[0].tolist()),
                )
                ps = compose(
                    sid, background, bank, harness.max_paste_objects,
                    seed=derive_seed(harness.seed, "compose", round_idx, sid),
                    class_count=n_classes,
                )
                pseudo_count += 1
                pseudo_labels += len(ps.pseudo_labels)

        record["bank_size"] = len([e for e in bank.entries if not e.is_fp])
        record["bank_false_positives"] = len([e for e in bank.entries if e.is_fp])
        record["pseudo_scenes"] = pseudo_count
        record["pseudo_labels"] = pseudo_labels
        record["cpsp_skill"] = {
            "recall_max": [float(r) for r in cal_cpsp_skill.recall_max],
            "sigma_xyz": cal_cpsp_skill.sigma_xyz,
            "sigma_yaw": cal_cpsp_skill.sigma_yaw,
        }
        rounds.append(record)

    return RoundsReport(
        classes=class_names,
        initial=initial_stats,
        rounds=rounds,
        n_rounds=n_rounds,
        exhausted=any_exhausted,
    )


def export_world(scenes: Sequence[Scene], classes: ClassSet, pool: Pool, directory) -> None:
    """Write scenes, ground truth and the pool manifest in standard formats."""
    directory = Path(directory)
    scene_dir = directory / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    gt_by_scene = {}
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        save_point_cloud(scene_dir / f"{sanitize_filename(scene.scene_id)}.bin", scene.points)
        if scene.gt:
            gt_by_scene[scene.scene_id] = list(scene.gt)
    save_detections_jsonl(directory / "gt.jsonl", gt_by_scene)
    save_pool_manifest(directory / "pool.json", pool, classes)
