"""Rotated 3D box geometry: IoU, point membership, NMS, point-cloud surgery.

Rotated footprint intersection is computed by Sutherland-Hodgman convex
clipping with a 1e-9 colinearity epsilon. All functions are pure.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .types import Box3D, Detection

CLIP_EPS = 1e-9

# Points on LiDAR surfaces sit exactly on box boundaries; removal inflates
# boxes by this margin unless told otherwise.
DEFAULT_REMOVAL_MARGIN = 0.1


def _polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon given as (n, 2) vertices."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Clip a convex polygon against a convex CCW clip polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        pts = output
        output = []
        px, py = pts[-1]
        prev_side = ex * (py - ay) - ey * (px - ax)
        for cx, cy in pts:
            cur_side = ex * (cy - ay) - ey * (cx - ax)
            cur_in = cur_side >= -CLIP_EPS
            if cur_in != (prev_side >= -CLIP_EPS):
                t = prev_side / (prev_side - cur_side)
                output.append((px + t * (cx - px), py + t * (cy - py)))
            if cur_in:
                output.append((cx, cy))
            px, py, prev_side = cx, cy, cur_side
    return np.asarray(output, dtype=np.float64).reshape(-1, 2)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    """Area of the intersection of two rotated box footprints."""
    return _polygon_area(_clip_polygon(a.corners_bev(), b.corners_bev()))


def iou_bev(a: Box3D, b: Box3D) -> float:
    """IoU of the rotated footprints in the ground plane."""
    inter = bev_intersection_area(a, b)
    union = a.dx * a.dy + b.dx * b.dy - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """IoU of two oriented 3D boxes.

    The intersection volume is the rotated BEV intersection area times the
    vertical overlap length; boxes share the vertical axis.
    """
    za0, za1 = a.z_range
    zb0, zb1 = b.z_range
    h = min(za1, zb1) - max(za0, zb0)
    if h <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * h
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def points_in_box(points, box: Box3D, margin: float = 0.0) -> np.ndarray:
    """Indices of points inside the box inflated by ``margin`` per face.

    Points are rotated into the box frame by the inverse yaw about the box
    center; membership is the closed condition |u| <= dx/2 + margin, etc.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.empty(0, dtype=np.intp)
    dx = pts[:, 0] - box.cx
    dy = pts[:, 1] - box.cy
    dz = pts[:, 2] - box.cz
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    inside = (
        (np.abs(u) <= box.dx / 2.0 + margin)
        & (np.abs(v) <= box.dy / 2.0 + margin)
        & (np.abs(dz) <= box.dz / 2.0 + margin)
    )
    return np.nonzero(inside)[0]


def points_in_boxes_mask(points, boxes: Sequence[Box3D], margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside the union of (inflated) boxes."""
    pts = np.asarray(points, dtype=np.float64)
    mask = np.zeros(len(pts), dtype=bool)
    for box in boxes:
        mask[points_in_box(pts, box, margin)] = True
    return mask


def remove_points_in_boxes(points, boxes: Sequence[Box3D], margin: float = DEFAULT_REMOVAL_MARGIN) -> np.ndarray:
    """Complement of the union of box memberships; preserves input order."""
    pts = np.asarray(points)
    if len(pts) == 0 or not boxes:
        return pts
    return pts[~points_in_boxes_mask(pts, boxes, margin)]


def nms(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy class-agnostic non-maximum suppression.

    Boxes are visited in descending score order (ties keep input order); a
    box is suppressed when its 3D IoU against any already-kept box reaches
    ``iou_thresh``. The output is in descending score order.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(iou_3d(dets[i].box, dets[j].box) < iou_thresh for j in kept):
            kept.append(i)
    return [dets[i] for i in kept]


def monte_carlo_iou_3d(a: Box3D, b: Box3D, n_samples: int, seed: int) -> float:
    """Sampling estimate of 3D IoU over the union's bounding box.

    Independent oracle for :func:`iou_3d`; shares no code path with the
    polygon clipping route beyond point membership.
    """
    rng = np.random.default_rng(seed)
    ca, cb = a.corners_bev(), b.corners_bev()
    lo = np.array(
        [
            min(ca[:, 0].min(), cb[:, 0].min()),
            min(ca[:, 1].min(), cb[:, 1].min()),
            min(a.z_range[0], b.z_range[0]),
        ]
    )
    hi = np.array(
        [
            max(ca[:, 0].max(), cb[:, 0].max()),
            max(ca[:, 1].max(), cb[:, 1].max()),
            max(a.z_range[1], b.z_range[1]),
        ]
    )
    samples = rng.uniform(lo, hi, size=(n_samples, 3))
    in_a = np.zeros(n_samples, dtype=bool)
    in_b = np.zeros(n_samples, dtype=bool)
    in_a[points_in_box(samples, a)] = True
    in_b[points_in_box(samples, b)] = True
    union = int(np.count_nonzero(in_a | in_b))
    if union == 0:
        return 0.0
    return float(np.count_nonzero(in_a & in_b)) / union
