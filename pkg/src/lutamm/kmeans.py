"""Metric-aware k-means (Lloyd iteration) for codebook learning.

The center update is matched to the assignment metric so that every Lloyd
iteration minimizes the same within-cluster distortion it is measured by:

    l2         -> per-coordinate mean
    l1         -> per-coordinate median
    chebyshev  -> per-coordinate midrange ((min + max) / 2)

Ties in the assignment step break to the lowest center index. Empty clusters
are re-seeded from the point currently farthest from its assigned center.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .metrics import SimilarityMetric, pairwise_distances


def _kmeanspp_init(
    points: np.ndarray, c: int, metric: SimilarityMetric, rng: np.random.Generator
) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((c, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    for j in range(1, c):
        dists = pairwise_distances(points, centers[:j], metric).min(axis=1)
        total = dists.sum()
        if total <= 0.0:
            # every point already coincides with a center; duplicates are fine
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=dists / total)]
    return centers


def _update_centers(
    points: np.ndarray,
    assign: np.ndarray,
    centers: np.ndarray,
    metric: SimilarityMetric,
) -> np.ndarray:
    c = centers.shape[0]
    new = centers.copy()
    empty = []
    for j in range(c):
        members = points[assign == j]
        if members.shape[0] == 0:
            empty.append(j)
            continue
        if metric == SimilarityMetric.L2:
            new[j] = members.mean(axis=0)
        elif metric == SimilarityMetric.L1:
            new[j] = np.median(members, axis=0)
        else:
            new[j] = 0.5 * (members.min(axis=0) + members.max(axis=0))
    if empty:
        dists = pairwise_distances(points, new, metric)[np.arange(len(assign)), assign]
        for j in empty:
            far = int(np.argmax(dists))
            new[j] = points[far]
            dists[far] = -1.0  # one point repairs at most one empty cluster
    return new


def kmeans_fit(
    points: np.ndarray,
    c: int,
    metric: SimilarityMetric = SimilarityMetric.L2,
    seed: int = 0,
    max_iter: int = 100,
    return_history: bool = False,
):
    """Cluster `points` into `c` centers under the configured metric.

    Args:
        points: (n, v) training vectors, n >= 1.
        c: number of centers, c >= 2.
        metric: assignment / update metric.
        seed: RNG seed; identical seeds give bit-identical centers.
        max_iter: Lloyd iteration cap (stops early at an assignment fixpoint).
        return_history: also return the per-iteration distortion trace.

    Returns:
        (c, v) float64 centers, or (centers, distortions) when
        `return_history` is set. `distortions[i]` is the total distortion under
        the centers in effect when the i-th assignment was made.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    if points.ndim != 2 or points.shape[0] < 1:
        raise InvalidInputError(f"need a non-empty (n, v) point set, got {points.shape}")
    if not np.isfinite(points).all():
        raise InvalidInputError("non-finite values in k-means input")
    if c < 2:
        raise InvalidInputError(f"centroid count must be >= 2, got {c}")
    metric = SimilarityMetric(metric)

    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(points, c, metric, rng)
    history = []
    prev_assign = None
    for _ in range(max_iter):
        dists = pairwise_distances(points, centers, metric)
        assign = dists.argmin(axis=1)  # argmin ties -> lowest index
        history.append(float(dists[np.arange(points.shape[0]), assign].sum()))
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        centers = _update_centers(points, assign, centers, metric)
        prev_assign = assign
    if return_history:
        return centers, history
    return centers
