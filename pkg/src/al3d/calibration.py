"""Detection calibration: greedy TP matching and confidence-binned error.

The error metric bins detections by confidence and weights the per-bin gap
between precision and mean confidence by bin mass. Binning is on confidence
only (the dominant term of the detection calibration error); matching is
class-aware at a configurable IoU floor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .geometry import iou_3d
from .types import Detection

DEFAULT_BIN_EDGES = (0.0, 0.3, 0.5, 0.8, 1.0)
DEFAULT_MATCH_IOU = 0.5


@dataclass(frozen=True)
class ReliabilityReport:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    mean_confidence: tuple[float, ...]
    precision: tuple[float, ...]
    d_ece: float


def match_predictions(
    dets: Sequence[Detection],
    gt: Sequence[Detection],
    iou_floor: float = DEFAULT_MATCH_IOU,
) -> np.ndarray:
    """Greedy class-aware matching; one detection per ground-truth box.

    Detections are visited in descending score order (ties keep input
    order); each takes the best-IoU unmatched same-class ground truth at or
    above ``iou_floor``. Returns a boolean vector aligned with ``dets``.
    """
    matched = np.zeros(len(dets), dtype=bool)
    gt_used = [False] * len(gt)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    for i in order:
        det = dets[i]
        best_j, best_iou = -1, 0.0
        for j, g in enumerate(gt):
            if gt_used[j] or g.class_id != det.class_id:
                continue
            iou = iou_3d(det.box, g.box)
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0 and best_iou >= iou_floor:
            matched[i] = True
            gt_used[best_j] = True
    return matched


def reliability(
    dets: Sequence[Detection],
    matches: np.ndarray,
    edges: Sequence[float] = DEFAULT_BIN_EDGES,
) -> ReliabilityReport:
    """Bin detections by score and compute the calibration error.

    Bins are right-closed, (lo, hi], with the first bin including its left
    edge. ``d_ece = sum_bins (count/N) * |precision - mean confidence|``;
    empty bins contribute nothing.
    """
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError(f"bin edges must be strictly increasing: {edges}")
    n_bins = len(edges) - 1
    scores = np.array([d.score for d in dets], dtype=np.float64)
    matches = np.asarray(matches, dtype=bool)

    counts = np.zeros(n_bins, dtype=np.int64)
    conf_sums = np.zeros(n_bins)
    tp_counts = np.zeros(n_bins, dtype=np.int64)
    if len(scores):
        bins = np.digitize(scores, edges, right=True) - 1
        bins = np.clip(bins, 0, n_bins - 1)
        for b in range(n_bins):
            in_bin = bins == b
            counts[b] = int(np.count_nonzero(in_bin))
            if counts[b]:
                conf_sums[b] = float(scores[in_bin].sum())
                tp_counts[b] = int(np.count_nonzero(matches[in_bin]))

    total = int(counts.sum())
    mean_conf = np.divide(conf_sums, counts, out=np.zeros(n_bins), where=counts > 0)
    precision = np.divide(
        tp_counts.astype(np.float64), counts, out=np.zeros(n_bins), where=counts > 0
    )
    d_ece = 0.0
    if total:
        d_ece = float(np.sum((counts / total) * np.abs(precision - mean_conf)))
    return ReliabilityReport(
        edges=edges,
        counts=tuple(int(c) for c in counts),
        mean_confidence=tuple(float(c) for c in mean_conf),
        precision=tuple(float(p) for p in precision),
        d_ece=d_ece,
    )


def write_reliability_csv(report: ReliabilityReport, path) -> None:
    """Histogram rows (bin, count, mean_conf, precision) for plotting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "count", "mean_conf", "precision"])
        for i in range(len(report.counts)):
            label = f"({report.edges[i]:g},{report.edges[i + 1]:g}]"
            writer.writerow(
                [label, report.counts[i], repr(report.mean_confidence[i]), repr(report.precision[i])]
            )
