"""Seeded k-means: k-means++ init, Lloyd iterations, deterministic ties.

Used for confident-group identification on 1-D uncertainty scores and for
compacting feature banks. Results are bitwise reproducible for a fixed
(samples, k, seed) triple; argmin ties always resolve to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInputError

CONVERGENCE_TOL = 1e-6
MAX_ITER = 100


@dataclass(frozen=True)
class KMeansResult:
    centers: np.ndarray      # (k_eff, d)
    assignments: np.ndarray  # (n,) index of the nearest center
    inertia: float           # sum of squared distances to assigned centers


def _sq_dists(samples: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = samples[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _init_plus_plus(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(samples)
    centers = [samples[int(rng.integers(n))]]
    d2 = np.sum((samples - centers[0]) ** 2, axis=1)
    while len(centers) < k:
        total = float(d2.sum())
        if total <= 0.0:
            break  # remaining samples duplicate existing centers
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centers.append(samples[idx])
        d2 = np.minimum(d2, np.sum((samples - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def kmeans(
    samples,
    k: int,
    seed: int,
    inertia_history: Optional[list] = None,
) -> KMeansResult:
    """Cluster samples into at most ``k`` groups.

    Runs k-means++ seeding followed by Lloyd iterations until the largest
    center movement drops below 1e-6 or 100 iterations pass. Clusters that
    empty out are re-seeded to the sample farthest from its assigned center.
    If fewer than ``k`` distinct samples exist, fewer centers are returned.
    """
    pts = np.asarray(samples, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if len(pts) == 0 or pts.size == 0:
        raise EmptyInputError("kmeans requires at least one sample")
    k_eff = min(int(k), len(pts))
    if k_eff < 1:
        raise EmptyInputError(f"k must be >= 1, got {k}")

    rng = np.random.default_rng(seed)
    centers = _init_plus_plus(pts, k_eff, rng)

    for _ in range(MAX_ITER):
        d2 = _sq_dists(pts, centers)
        assign = np.argmin(d2, axis=1)
        if inertia_history is not None:
            inertia_history.append(float(d2[np.arange(len(pts)), assign].sum()))
        new_centers = centers.copy()
        for j in range(len(centers)):
            members = pts[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
            else:
                # re-seed to the farthest sample (ties -> lowest index)
                far = int(np.argmax(d2[np.arange(len(pts)), assign]))
                new_centers[j] = pts[far]
        move = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if move < CONVERGENCE_TOL:
            break

    d2 = _sq_dists(pts, centers)
    assign = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(pts)), assign].sum())
    return KMeansResult(centers=centers, assignments=assign, inertia=inertia)


def confident_group(uncertainties: Sequence[float], k: int, seed: int) -> np.ndarray:
    """Indices of the cluster with the lowest center on 1-D uncertainties."""
    scores = np.asarray(uncertainties, dtype=np.float64).reshape(-1, 1)
    result = kmeans(scores, k, seed)
    lowest = int(np.argmin(result.centers[:, 0]))
    return np.nonzero(result.assignments == lowest)[0]


def representative_features(features, m: int, seed: int) -> np.ndarray:
    """Compact a feature set to ``m`` L2-normalized k-means centers."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats.reshape(-1, 1)
    result = kmeans(feats, m, seed)
    centers = result.centers
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return centers / norms
