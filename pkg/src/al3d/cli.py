"""Command-line surface: ``select``, ``bank``, ``compose``, ``calib``, ``sim``.

Every command is a thin wrapper over the library: a config JSON file
provides paths and parameters, and ``--seed`` / ``--threads`` / ``--out``
flags override it. Exit codes: 0 success, 1 input error, 2 partial result
(budget not met before the pool ran out). Inputs are never mutated; outputs
land under the output directory only.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import box_bank as bank_ops
from ._parallel import map_ordered
from .calibration import (
    DEFAULT_BIN_EDGES,
    match_predictions,
    reliability,
    write_reliability_csv,
)
from .errors import Al3dError, ConfigError, MissingDataError
from .io import (
    load_detections_jsonl,
    load_ignore_regions,
    load_point_cloud,
    load_pool_manifest,
    scene_points_path,
)
from .pseudo_scene import compose, emit_dataset, mine_background
from .seeding import derive_seed
from .selection import SelectionConfig, build_candidate, select
from .simulator import (
    CalibrationMode,
    DetectorSkill,
    HarnessConfig,
    SkillSchedule,
    WorldConfig,
    export_world,
    gen_world,
    initial_pool,
    run_rounds,
)
from .types import Pool, Scene, Source, filter_ignore_frames


class RunConfig:
    """Config file contents plus flag overrides; paths resolve relative to
    the config file's directory."""

    def __init__(self, data: dict, base_dir: Path, out: Path, seed: int, threads: int):
        self.data = data
        self.base_dir = base_dir
        self.out = out
        self.seed = seed
        self.threads = threads

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise ConfigError(f"config file not found: {cfg_path}")
        try:
            data = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg_path}: invalid JSON: {exc}") from exc
        base = cfg_path.parent
        out = args.out if args.out is not None else data.get("out", "out")
        out_path = Path(out) if Path(out).is_absolute() else base / out
        seed = args.seed if args.seed is not None else int(data.get("seed", 0))
        threads = args.threads if args.threads is not None else int(data.get("threads", 1))
        return cls(data, base, out_path, seed, threads)

    def value(self, key: str, default=None):
        return self.data.get(key, default)

    def require(self, key: str):
        if key not in self.data:
            raise ConfigError(f"config is missing required key '{key}'")
        return self.data[key]

    def path(self, key: str, required: bool = True) -> Optional[Path]:
        raw = self.require(key) if required else self.data.get(key)
        if raw is None:
            return None
        p = Path(raw)
        if not p.is_absolute():
            p = self.base_dir / p
        if not p.exists():
            raise ConfigError(f"config key '{key}': path does not exist: {p}")
        return p


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _selection_config(cfg: RunConfig) -> SelectionConfig:
    return SelectionConfig(
        budget_boxes=int(cfg.require("budget_boxes")),
        similarity_threshold=float(cfg.value("similarity_threshold", 0.9)),
        reduced_class_weight=float(cfg.value("reduced_class_weight", 0.1)),
        min_class_cap=float(cfg.value("min_class_cap", 0.0)),
        feature_bank_size=int(cfg.value("feature_bank_size", 256)),
        class_balance=bool(cfg.value("class_balance", True)),
        seed=cfg.seed,
    )


def _load_scene(scene_dir: Path, scene_id: str, regions=None) -> Scene:
    path = scene_points_path(scene_dir, scene_id)
    if path is None:
        raise MissingDataError(f"no point file for scene '{scene_id}' under {scene_dir}")
    return Scene(
        scene_id=scene_id,
        points=load_point_cloud(path),
        ignore_regions=(regions or {}).get(scene_id),
    )


def _labeled_class_counts(cfg: RunConfig, pool: Pool, n_classes: int) -> np.ndarray:
    counts = np.zeros(n_classes, dtype=np.int64)
    if cfg.value("labeled_counts") is not None:
        vals = cfg.value("labeled_counts")
        if len(vals) != n_classes:
            raise ConfigError("labeled_counts length must match the class set")
        return np.asarray(vals, dtype=np.int64)
    gt_path = cfg.path("gt", required=False)
    if gt_path is None:
        raise ConfigError("config needs 'labeled_counts' or a 'gt' label file")
    gt = load_detections_jsonl(gt_path, Source.GROUND_TRUTH)
    for sid in pool.labeled:
        for det in gt.get(sid, ()):
            counts[det.class_id] += 1
    return counts


def cmd_select(args) -> int:
    cfg = RunConfig.from_args(args)
    pool, classes = load_pool_manifest(cfg.path("pool"))
    det_paths = cfg.require("detections")
    if not isinstance(det_paths, dict) or "normal" not in det_paths or "cpsp" not in det_paths:
        raise ConfigError("'detections' must be a map with 'normal' and 'cpsp' paths")
    scene_dir = cfg.path("scene_dir")
    normal = load_detections_jsonl(_resolve(cfg, det_paths["normal"]), Source.NORMAL)
    cpsp = load_detections_jsonl(_resolve(cfg, det_paths["cpsp"]), Source.CPSP)
    regions_path = cfg.path("ignore_regions", required=False)
    regions = load_ignore_regions(regions_path) if regions_path else {}

    unlabeled = sorted(pool.unlabeled)
    scenes = [_load_scene(scene_dir, sid, regions) for sid in unlabeled]
    union_dets = {
        sid: list(normal.get(sid, ())) + list(cpsp.get(sid, ())) for sid in unlabeled
    }
    kept = filter_ignore_frames(scenes, union_dets, int(cfg.value("max_ignore_hits", 2)))
    excluded = sorted(set(unlabeled) - set(kept))

    scene_by_id = {s.scene_id: s for s in scenes}
    conf = float(cfg.value("conf_thresh", 0.7))
    nms_iou = float(cfg.value("nms_iou", 0.5))
    match_iou = float(cfg.value("match_iou", 0.5))

    def make_candidate(sid):
        return build_candidate(
            scene_by_id[sid], normal.get(sid, ()), cpsp.get(sid, ()),
            conf, nms_iou, match_iou,
        )

    candidates = dict(zip(kept, map_ordered(make_candidate, kept, cfg.threads)))
    sel_pool = Pool(pool.labeled, frozenset(kept))
    sel_config = _selection_config(cfg)
    labeled_counts = _labeled_class_counts(cfg, pool, len(classes))
    result = select(sel_pool, candidates, classes, sel_config, labeled_counts=labeled_counts)

    _write_json(
        cfg.out / "selected.json",
        {
            "selected": result.chosen,
            "exhausted": result.exhausted,
            "num_boxes": result.num_boxes,
        },
    )
    _write_json(
        cfg.out / "report.json",
        {
            "events": result.events,
            "box_counts": {classes.names[c]: int(result.box_counts[c]) for c in range(len(classes))},
            "caps": [float(c) for c in result.caps],
            "final_weights": list(result.final_weights),
            "excluded_frames": excluded,
            "exhausted": result.exhausted,
            "seed": cfg.seed,
        },
    )
    rows = [["class", "selected_boxes", "cap"]]
    for c in range(len(classes)):
        rows.append([classes.names[c], int(result.box_counts[c]), repr(float(result.caps[c]))])
    _write_csv(cfg.out / "report.csv", rows)
    return 2 if result.exhausted else 0


def _resolve(cfg: RunConfig, raw) -> Path:
    p = Path(raw)
    if not p.is_absolute():
        p = cfg.base_dir / p
    if not p.exists():
        raise ConfigError(f"path does not exist: {p}")
    return p


def _bank_scene_ids(cfg: RunConfig) -> list[str]:
    if cfg.value("scene_ids") is not None:
        return list(cfg.value("scene_ids"))
    pool, _ = load_pool_manifest(cfg.path("pool"))
    return sorted(pool.unlabeled)


def cmd_bank(args) -> int:
    cfg = RunConfig.from_args(args)
    action = args.action
    if action == "stats":
        bank = bank_ops.load(cfg.path("bank"))
        stats = bank_ops.bank_stats(bank)
        for key in ("round", "total", "false_positives"):
            print(f"{key}: {stats[key]}")
        for cls, count in stats["objects_per_class"].items():
            print(f"class {cls}: {count}")
        for q, v in stats["score_quantiles"].items():
            print(f"score q{q}: {v}")
        return 0

    tau = float(cfg.value("tau_overlap", bank_ops.DEFAULT_TAU_OVERLAP))
    stale = cfg.value("stale_rounds", bank_ops.DEFAULT_STALE_ROUNDS)
    stale = float("inf") if stale in ("inf", None) else float(stale)
    base_path = cfg.path("bank", required=False)
    base = bank_ops.load(base_path) if base_path else bank_ops.BoxBank()

    if action == "refine":
        new_path = cfg.path("new_bank", required=False)
        new_entries = list(bank_ops.load(new_path).entries) if new_path else []
        refined = bank_ops.refine(base, new_entries, tau, stale)
    else:  # extract
        scene_dir = cfg.path("scene_dir")
        dets = load_detections_jsonl(_resolve(cfg, cfg.require("detections")), Source.CPSP)
        gt_path = cfg.path("gt", required=False)
        gt = load_detections_jsonl(gt_path, Source.GROUND_TRUTH) if gt_path else {}
        k = int(cfg.value("k", 20))
        round_idx = base.round + 1
        entries = []
        for sid in _bank_scene_ids(cfg):
            scene_dets = dets.get(sid, [])
            if not scene_dets:
                continue
            scene = _load_scene(scene_dir, sid)
            entries.extend(
                bank_ops.extract_confident(
                    scene, scene_dets, k,
                    seed=derive_seed(cfg.seed, "bank", sid),
                    round_idx=round_idx,
                )
            )
            if sid in gt:
                entries.extend(
                    bank_ops.mine_false_positives(
                        scene, scene_dets, float(cfg.value("fp_conf_floor", 0.5)),
                        verified=gt[sid], round_idx=round_idx,
                    )
                )
        refined = bank_ops.refine(base, entries, tau, stale)

    bank_ops.persist(refined, cfg.out / "bank")
    print(f"bank: {len(refined)} entries, round {refined.round}")
    return 0


def cmd_compose(args) -> int:
    cfg = RunConfig.from_args(args)
    pool, classes = load_pool_manifest(cfg.path("pool"))
    scene_dir = cfg.path("scene_dir")
    dets = load_detections_jsonl(_resolve(cfg, cfg.require("detections")), Source.CPSP)
    bank_path = cfg.path("bank", required=False)
    bank = bank_ops.load(bank_path) if bank_path else bank_ops.BoxBank()
    gt_path = cfg.path("gt", required=False)
    gt = load_detections_jsonl(gt_path, Source.GROUND_TRUTH) if gt_path else {}

    removal_floor = float(cfg.value("removal_floor", 0.1))
    margin = float(cfg.value("margin", 0.1))
    max_objects = int(cfg.value("max_objects", 10))
    fp_floor = float(cfg.value("fp_conf_floor", 0.5))
    scene_ids = cfg.value("scene_ids") or sorted(pool.unlabeled)

    pseudo = []
    for sid in scene_ids:
        scene = _load_scene(scene_dir, sid)
        scene_dets = dets.get(sid, [])
        preserve: set[int] = set()
        if sid in gt:
            mask = bank_ops.false_positive_mask(
                scene_dets, [g.box for g in gt[sid]], fp_floor
            )
            preserve = set(np.nonzero(mask)[0].tolist())
        background = mine_background(scene, scene_dets, removal_floor, margin, preserve)
        pseudo.append(
            compose(
                sid, background, bank, max_objects,
                seed=derive_seed(cfg.seed, "compose", sid),
                class_count=len(classes),
            )
        )
    emit_dataset(pseudo, cfg.out / "pseudo")
    print(f"composed {len(pseudo)} pseudo scenes")
    return 0


def cmd_calib(args) -> int:
    cfg = RunConfig.from_args(args)
    dets = load_detections_jsonl(_resolve(cfg, cfg.require("detections")), Source.NORMAL)
    gt = load_detections_jsonl(cfg.path("gt"), Source.GROUND_TRUTH)
    iou_floor = float(cfg.value("iou_floor", 0.5))
    edges = tuple(cfg.value("edges", DEFAULT_BIN_EDGES))

    all_dets = []
    all_matches = []
    for sid in sorted(set(dets) | set(gt)):
        scene_dets = dets.get(sid, [])
        matches = match_predictions(scene_dets, gt.get(sid, []), iou_floor)
        all_dets.extend(scene_dets)
        all_matches.extend(bool(m) for m in matches)
    report = reliability(all_dets, np.asarray(all_matches, dtype=bool), edges)

    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_json(
        cfg.out / "calibration.json",
        {
            "d_ece": report.d_ece,
            "edges": list(report.edges),
            "counts": list(report.counts),
            "mean_confidence": list(report.mean_confidence),
            "precision": list(report.precision),
        },
    )
    write_reliability_csv(report, cfg.out / "calibration.csv")
    print(f"d_ece: {report.d_ece}")
    return 0


def _dataclass_from_dict(cls, data: dict, converters=None):
    converters = converters or {}
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        conv = converters.get(key)
        kwargs[key] = conv(value) if conv else value
    return cls(**kwargs)


def _world_from_dict(data: dict) -> WorldConfig:
    return _dataclass_from_dict(
        WorldConfig,
        data,
        {
            "class_mix": tuple,
            "objects_per_scene": tuple,
            "class_sizes": lambda v: None if v is None else tuple(tuple(s) for s in v),
            "class_names": lambda v: None if v is None else tuple(v),
        },
    )


def _skill_from_dict(data: dict) -> DetectorSkill:
    return _dataclass_from_dict(
        DetectorSkill,
        data,
        {
            "recall_max": tuple,
            "recall_n50": tuple,
            "confusion": lambda v: tuple(tuple(row) for row in v),
            "calibration": CalibrationMode,
        },
    )


def _harness_from_dict(data: dict) -> HarnessConfig:
    return _dataclass_from_dict(
        HarnessConfig,
        data,
        {"schedule": lambda v: _dataclass_from_dict(SkillSchedule, v)},
    )


def cmd_sim(args) -> int:
    cfg = RunConfig.from_args(args)
    world_cfg = _world_from_dict(dict(cfg.require("world")))
    skills_raw = cfg.require("skills")
    skills = {name: _skill_from_dict(dict(spec)) for name, spec in skills_raw.items()}
    sel_raw = dict(cfg.require("selection"))
    sel_raw.setdefault("seed", cfg.seed)
    sel_config = _dataclass_from_dict(SelectionConfig, sel_raw)
    harness = _harness_from_dict(dict(cfg.value("harness", {})))
    n_rounds = int(cfg.require("n_rounds"))

    scenes = gen_world(world_cfg, threads=cfg.threads)
    report = run_rounds(scenes, skills, sel_config, n_rounds, harness)

    _write_json(cfg.out / "rounds_report.json", report.to_dict())
    _write_csv(cfg.out / "rounds_report.csv", report.csv_rows())
    if cfg.value("export_world", False):
        classes = world_cfg.classes()
        pool = initial_pool(
            scenes, world_cfg.n_classes, harness.initial_boxes, harness.seed
        )
        export_world(scenes, classes, pool, cfg.out / "world")
    print(f"rounds: {n_rounds}, exhausted: {report.exhausted}")
    return 2 if report.exhausted else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="al3d",
        description="Active-learning selection pipeline for 3D detection data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None, help="parallelism cap")
        p.add_argument("--out", default=None, help="output directory")

    add_common(sub.add_parser("select", help="budgeted frame selection"))
    p_bank = sub.add_parser("bank", help="confident-object bank maintenance")
    p_bank.add_argument("action", choices=["extract", "refine", "stats"])
    add_common(p_bank)
    add_common(sub.add_parser("compose", help="pseudo-scene composition"))
    add_common(sub.add_parser("calib", help="calibration analysis"))
    p_sim = sub.add_parser("sim", help="seeded simulator")
    p_sim.add_argument("action", choices=["run"])
    add_common(p_sim)

    args = parser.parse_args(argv)
    handlers = {
        "select": cmd_select,
        "bank": cmd_bank,
        "compose": cmd_compose,
        "calib": cmd_calib,
        "sim": cmd_sim,
    }
    try:
        return handlers[args.command](args)
    except (Al3dError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
