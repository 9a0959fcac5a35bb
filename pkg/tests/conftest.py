import math

import numpy as np
import pytest

from al3d.types import Box3D, Detection, Source


def make_box(cx=0.0, cy=0.0, cz=0.0, dx=1.0, dy=1.0, dz=1.0, yaw=0.0) -> Box3D:
    return Box3D(cx, cy, cz, dx, dy, dz, yaw)


def make_det(probs, score=0.9, box=None, class_id=None, feature=None,
             source=Source.NORMAL) -> Detection:
    probs = np.asarray(probs, dtype=np.float64)
    if class_id is None:
        class_id = int(np.argmax(probs))
    return Detection(
        class_id=class_id,
        probs=probs,
        score=score,
        box=box if box is not None else make_box(),
        feature=feature,
        source=source,
    )


def probs_with_entropy(target_entropy: float, n_classes: int, peak_class: int) -> np.ndarray:
    """Distribution (1-2q, q, ..., q) with the requested Shannon entropy.

    Solved by bisection on q; the peak stays at ``peak_class``.
    """
    def entropy_of(q):
        rest = (n_classes - 1) * q
        p0 = 1.0 - rest
        total = 0.0
        for p in [p0] + [q] * (n_classes - 1):
            if p > 0:
                total -= p * math.log(p)
        return total

    lo, hi = 1e-12, (1.0 - 1e-9) / n_classes  # keep p0 strictly the max
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if entropy_of(mid) < target_entropy:
            lo = mid
        else:
            hi = mid
    q = (lo + hi) / 2.0
    probs = np.full(n_classes, q)
    probs[0] = 1.0 - (n_classes - 1) * q
    if peak_class != 0:
        probs[[0, peak_class]] = probs[[peak_class, 0]]
    return probs


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
