"""Similarity metrics and numeric-precision helpers.

All three metrics return *distances* (lower is more similar):

    l2         sum of squared differences (no square root)
    l1         sum of absolute differences
    chebyshev  maximum absolute difference over coordinates
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import InvalidInputError


class SimilarityMetric(str, Enum):
    L2 = "l2"
    L1 = "l1"
    CHEBYSHEV = "chebyshev"


class DistPrecision(str, Enum):
    FP32 = "fp32"
    BF16 = "bf16"


class LutPrecision(str, Enum):
    FP32 = "fp32"
    INT8 = "int8"


def bf16_round(x: np.ndarray) -> np.ndarray:
    """Round float data to bfloat16 precision (8-bit mantissa), kept as float32.

    Uses round-to-nearest-even on the float32 bit pattern, which matches the
    usual hardware float32 -> bf16 conversion.
    """
    x32 = np.ascontiguousarray(x, dtype=np.float32)
    bits = x32.view(np.uint32)
    lsb = (bits >> 16) & 1
    rounded = (bits + 0x7FFF + lsb) & 0xFFFF0000
    return rounded.astype(np.uint32).view(np.float32)


def pairwise_distances(
    points: np.ndarray, centers: np.ndarray, metric: SimilarityMetric
) -> np.ndarray:
    """Distance matrix between every point and every center.

    Args:
        points: (n, v) array.
        centers: (c, v) array.
        metric: which distance to evaluate.

    Returns:
        (n, c) float array of distances, computed in the dtype of the inputs'
        promotion (callers pick the arithmetic precision by casting first).
    """
    points = np.asarray(points)
    centers = np.asarray(centers)
    if points.ndim != 2 or centers.ndim != 2 or points.shape[1] != centers.shape[1]:
        raise InvalidInputError(
            f"incompatible shapes for distance: {points.shape} vs {centers.shape}"
        )
    diff = points[:, None, :] - centers[None, :, :]
    metric = SimilarityMetric(metric)
    if metric == SimilarityMetric.L2:
        return (diff * diff).sum(axis=2)
    if metric == SimilarityMetric.L1:
        return np.abs(diff).sum(axis=2)
    return np.abs(diff).max(axis=2)


def distance(x: np.ndarray, z: np.ndarray, metric: SimilarityMetric) -> float:
    """Distance between two equal-length vectors under `metric`."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if x.shape != z.shape:
        raise InvalidInputError(f"length mismatch: {x.shape[1]} vs {z.shape[1]}")
    return float(pairwise_distances(x, z, metric)[0, 0])
