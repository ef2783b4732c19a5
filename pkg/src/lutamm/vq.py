"""Vector-quantized approximate matrix multiplication (lookup-table GEMM).

An M x K input matrix is split row-wise into N_c = ceil(K / v) subvector
groups; each group gets its own learned codebook of c centroids. Multiplying
by a fixed K x N weight matrix then reduces to:

    1. encode   -- replace every length-v subvector by its nearest-centroid
                   index (M x N_c small integers instead of M x K floats),
    2. lookup   -- accumulate precomputed centroid-times-weight partial
                   products from a table indexed by (subspace, index, column).

The lookup path computes exactly "reconstruct the input from centroids, then
multiply": with a full-precision table it matches `exact_gemm` applied to the
centroid reconstruction bit-for-bit up to float32 storage of table entries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, InvalidInputError
from .kmeans import kmeans_fit
from .metrics import (
    DistPrecision,
    LutPrecision,
    SimilarityMetric,
    bf16_round,
    distance,
    pairwise_distances,
)

__all__ = [
    "ProblemShape",
    "VQConfig",
    "Codebook",
    "PSumTable",
    "AmmError",
    "partition",
    "encode",
    "build_lut",
    "lut_gemm",
    "exact_gemm",
    "amm_error",
    "fit_codebook",
    "nchw_to_gemm",
    "distance",
]


@dataclass(frozen=True)
class ProblemShape:
    """GEMM dimensions: (m x k) input times (k x n) weights."""

    m: int
    k: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.k < 1 or self.n < 1:
            raise InvalidInputError(f"all GEMM dimensions must be >= 1, got {self}")


@dataclass(frozen=True)
class VQConfig:
    """Quantizer hyper-parameters.

    Args:
        v: subvector length in elements.
        c: centroids per codebook. c == 1 is allowed as the degenerate
           rank-collapse configuration; learning requires c >= 2.
        metric: similarity metric used for encoding.
        dist_precision: arithmetic precision of distance evaluation.
        lut_precision: storage precision of table entries.
    """

    v: int
    c: int
    metric: SimilarityMetric = SimilarityMetric.L2
    dist_precision: DistPrecision = DistPrecision.FP32
    lut_precision: LutPrecision = LutPrecision.FP32

    def __post_init__(self):
        if self.v < 1:
            raise InvalidInputError(f"subvector length must be >= 1, got {self.v}")
        if self.c < 1:
            raise InvalidInputError(f"centroid count must be >= 1, got {self.c}")
        object.__setattr__(self, "metric", SimilarityMetric(self.metric))
        object.__setattr__(self, "dist_precision", DistPrecision(self.dist_precision))
        object.__setattr__(self, "lut_precision", LutPrecision(self.lut_precision))

    def num_subspaces(self, k: int) -> int:
        return -(-k // self.v)

    @property
    def index_bits(self) -> int:
        """Bits needed to store one centroid index (>= 1 even for c == 1)."""
        return max(1, math.ceil(math.log2(self.c))) if self.c > 1 else 1

    @property
    def equivalent_bits(self) -> float:
        """Effective bits per original input element after index encoding."""
        return math.ceil(math.log2(self.c)) / self.v if self.c > 1 else 1.0 / self.v


@dataclass
class Codebook:
    """Per-subspace centroid matrices.

    `centroids` has shape (N_c, c, v). When `input_dim` is not a multiple of
    v, the final subspace is zero-padded: centroids carry v columns and the
    reconstruction crops back to `input_dim`.
    """

    centroids: np.ndarray
    input_dim: int

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 3:
            raise InvalidInputError(
                f"centroids must be (N_c, c, v), got shape {self.centroids.shape}"
            )
        if not np.isfinite(self.centroids).all():
            raise InvalidInputError("non-finite centroid values")
        expect = -(-self.input_dim // self.v)
        if self.n_c != expect:
            raise InvalidInputError(
                f"{self.n_c} subspaces inconsistent with input_dim={self.input_dim}, v={self.v}"
            )

    @property
    def n_c(self) -> int:
        return self.centroids.shape[0]

    @property
    def c(self) -> int:
        return self.centroids.shape[1]

    @property
    def v(self) -> int:
        return self.centroids.shape[2]

    def reconstruct(self, indices: np.ndarray) -> np.ndarray:
        """Map (M, N_c) indices back to the (M, input_dim) centroid surrogate."""
        indices = _check_indices(indices, self.n_c, self.c)
        parts = [self.centroids[k][indices[:, k]] for k in range(self.n_c)]
        return np.concatenate(parts, axis=1)[:, : self.input_dim]

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "codebook",
                "input_dim": self.input_dim,
                "centroids": self.centroids.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        obj = json.loads(text)
        if obj.get("kind") != "codebook":
            raise InvalidInputError("not a codebook JSON document")
        return cls(np.array(obj["centroids"], dtype=np.float64), int(obj["input_dim"]))


@dataclass
class PSumTable:
    """Precomputed centroid-times-weight partial products.

    `entries[k, j, n]` holds dot(centroid j of subspace k, weight rows of
    subspace k restricted to output column n). With int8 storage, a symmetric
    scale is shared per (subspace, group of `tile_n` output columns) and
    `dense()` returns the dequantized float values every consumer accumulates.
    """

    entries: np.ndarray
    precision: LutPrecision
    scales: np.ndarray | None = None
    tile_n: int = 1
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_c(self) -> int:
        return self.entries.shape[0]

    @property
    def c(self) -> int:
        return self.entries.shape[1]

    @property
    def n(self) -> int:
        return self.entries.shape[2]

    def dense(self) -> np.ndarray:
        """Float64 view of the table used for accumulation (cached)."""
        if self._dense is None:
            if self.precision == LutPrecision.FP32:
                self._dense = self.entries.astype(np.float64)
            else:
                groups = np.repeat(
                    self.scales.astype(np.float64), self.tile_n, axis=1
                )[:, : self.n]
                self._dense = self.entries.astype(np.float64) * groups[:, None, :]
        return self._dense

    def size_bits(self, bit_lut: int | None = None) -> int:
        """Total storage bits: N * c * N_c * bit_lut."""
        if bit_lut is None:
            bit_lut = 8 if self.precision == LutPrecision.INT8 else 32
        return self.n * self.c * self.n_c * bit_lut

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "psum_table",
                "precision": self.precision.value,
                "tile_n": self.tile_n,
                "entries": self.entries.tolist(),
                "scales": None if self.scales is None else self.scales.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PSumTable":
        obj = json.loads(text)
        if obj.get("kind") != "psum_table":
            raise InvalidInputError("not a PSum-table JSON document")
        precision = LutPrecision(obj["precision"])
        dtype = np.int8 if precision == LutPrecision.INT8 else np.float32
        scales = obj["scales"]
        return cls(
            entries=np.array(obj["entries"], dtype=dtype),
            precision=precision,
            scales=None if scales is None else np.array(scales, dtype=np.float32),
            tile_n=int(obj["tile_n"]),
        )


@dataclass(frozen=True)
class AmmError:
    """Approximation error report against the exact-GEMM oracle."""

    frobenius_rel: float | None
    max_abs: float
    exact_norm_zero: bool = False


def _check_matrix(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise InvalidInputError(f"non-finite values in {name}")
    return a


def _check_indices(indices: np.ndarray, n_c: int, c: int) -> np.ndarray:
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[1] != n_c:
        raise InvalidInputError(
            f"encoded indices must be (M, {n_c}), got shape {indices.shape}"
        )
    if indices.size and (indices.min() < 0 or indices.max() >= c):
        raise CorruptionError(
            f"centroid index out of range [0, {c}): min={indices.min()}, max={indices.max()}"
        )
    return indices


def partition(a: np.ndarray, v: int) -> np.ndarray:
    """Split rows of `a` into length-v subvectors, one group per subspace.

    Args:
        a: (M, K) matrix.
        v: subvector length, >= 1.

    Returns:
        (N_c, M, v) array with N_c = ceil(K / v); the final group is
        zero-padded when K is not a multiple of v.
    """
    a = _check_matrix(a, "input matrix")
    if v < 1:
        raise InvalidInputError(f"subvector length must be >= 1, got {v}")
    m, k = a.shape
    n_c = -(-k // v)
    padded = np.zeros((m, n_c * v), dtype=np.float64)
    padded[:, :k] = a
    return padded.reshape(m, n_c, v).transpose(1, 0, 2)


def fit_codebook(
    a: np.ndarray, cfg: VQConfig, seed: int = 0, max_iter: int = 100
) -> Codebook:
    """Learn one codebook per subspace from the rows of `a` (k-means)."""
    groups = partition(a, cfg.v)
    n_c = groups.shape[0]
    centroids = np.empty((n_c, cfg.c, cfg.v), dtype=np.float64)
    for k in range(n_c):
        pts = groups[k]
        if cfg.c == 1:
            if cfg.metric == SimilarityMetric.L2:
                centroids[k, 0] = pts.mean(axis=0)
            elif cfg.metric == SimilarityMetric.L1:
                centroids[k, 0] = np.median(pts, axis=0)
            else:
                centroids[k, 0] = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        else:
            centroids[k] = kmeans_fit(pts, cfg.c, cfg.metric, seed=seed + k, max_iter=max_iter)
    return Codebook(centroids, input_dim=a.shape[1])


def encode(
    a: np.ndarray,
    codebook: Codebook,
    metric: SimilarityMetric = SimilarityMetric.L2,
    dist_precision: DistPrecision = DistPrecision.FP32,
) -> np.ndarray:
    """Assign every subvector of `a` to its nearest centroid.

    Distance arithmetic runs at `dist_precision` (bf16 truncates inputs and
    centroids to 8-bit mantissas, accumulating in float32). Ties break to the
    lowest centroid index.

    Returns:
        (M, N_c) int32 index matrix.
    """
    a = _check_matrix(a, "input matrix")
    if a.shape[1] != codebook.input_dim:
        raise InvalidInputError(
            f"matrix has {a.shape[1]} columns but codebook expects {codebook.input_dim}"
        )
    groups = partition(a, codebook.v)
    dist_precision = DistPrecision(dist_precision)
    indices = np.empty((a.shape[0], codebook.n_c), dtype=np.int32)
    for k in range(codebook.n_c):
        pts = groups[k]
        ctr = codebook.centroids[k]
        if dist_precision == DistPrecision.BF16:
            pts, ctr = bf16_round(pts), bf16_round(ctr)
        else:
            pts, ctr = pts.astype(np.float32), ctr.astype(np.float32)
        indices[:, k] = pairwise_distances(pts, ctr, metric).argmin(axis=1)
    return indices


def build_lut(
    codebook: Codebook,
    b: np.ndarray,
    lut_precision: LutPrecision = LutPrecision.FP32,
    tile_n: int = 1,
) -> PSumTable:
    """Precompute centroid-times-weight partial products for all subspaces.

    Args:
        codebook: learned centroids, N_c subspaces of (c, v).
        b: (K, N) weight matrix; rows are zero-padded to N_c * v like the
           input partition, so padded coordinates contribute nothing.
        lut_precision: fp32 entries, or int8 with a symmetric scale
            max|entry| / 127 shared per (subspace, `tile_n`-wide column group).
        tile_n: int8 scale-group width in output columns.
    """
    b = _check_matrix(b, "weight matrix")
    if b.shape[0] != codebook.input_dim:
        raise InvalidInputError(
            f"weights have {b.shape[0]} rows but codebook expects {codebook.input_dim}"
        )
    if tile_n < 1:
        raise InvalidInputError(f"tile_n must be >= 1, got {tile_n}")
    n_c, v, n = codebook.n_c, codebook.v, b.shape[1]
    b_pad = np.zeros((n_c * v, n), dtype=np.float64)
    b_pad[: b.shape[0]] = b
    exact = np.stack(
        [codebook.centroids[k] @ b_pad[k * v : (k + 1) * v] for k in range(n_c)]
    )
    lut_precision = LutPrecision(lut_precision)
    if lut_precision == LutPrecision.FP32:
        return PSumTable(exact.astype(np.float32), lut_precision)
    n_groups = -(-n // tile_n)
    pad_n = n_groups * tile_n
    grouped = np.zeros((n_c, codebook.c, pad_n), dtype=np.float64)
    grouped[:, :, :n] = exact
    grouped = grouped.reshape(n_c, codebook.c, n_groups, tile_n)
    scales = np.abs(grouped).max(axis=(1, 3)) / 127.0
    scales[scales == 0.0] = 1.0
    q = np.round(grouped / scales[:, None, :, None])  # round-half-to-even
    q = np.clip(q, -127, 127).astype(np.int8).reshape(n_c, codebook.c, pad_n)[:, :, :n]
    return PSumTable(q, lut_precision, scales=scales.astype(np.float32), tile_n=tile_n)


def lut_gemm(encoded: np.ndarray, table: PSumTable) -> np.ndarray:
    """Lookup-accumulate product: C[m, n] = sum_k table(k, encoded[m, k], n).

    Accumulation runs in float64, subspace-major (k ascending), which fixes
    the reduction order every other execution path must reproduce exactly.
    """
    encoded = _check_indices(encoded, table.n_c, table.c)
    dense = table.dense()
    out = np.zeros((encoded.shape[0], table.n), dtype=np.float64)
    for k in range(table.n_c):
        out += dense[k][encoded[:, k]]
    return out


def exact_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact full-precision product of `a` and `b` (the error oracle)."""
    a = _check_matrix(a, "left operand")
    b = _check_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b


def amm_error(
    a: np.ndarray, b: np.ndarray, cfg: VQConfig, codebook: Codebook
) -> AmmError:
    """Measure the lookup path against the exact product.

    Returns the relative Frobenius error and the elementwise max absolute
    error; when the exact product has zero norm the relative figure is
    undefined and flagged instead.
    """
    enc = encode(a, codebook, cfg.metric, cfg.dist_precision)
    table = build_lut(codebook, b, cfg.lut_precision)
    approx = lut_gemm(enc, table)
    exact = exact_gemm(a, b)
    diff = approx - exact
    max_abs = float(np.abs(diff).max())
    norm = float(np.linalg.norm(exact))
    if norm == 0.0:
        return AmmError(None, max_abs, exact_norm_zero=True)
    return AmmError(float(np.linalg.norm(diff) / norm), max_abs)


def nchw_to_gemm(x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Reshape an NCHW tensor into the (patches, C*kh*kw) GEMM operand.

    Minimal im2col used by the CNN-style toy tests; no dilation, no grouping.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise InvalidInputError(f"expected NCHW tensor, got shape {x.shape}")
    n, ch, h, w = x.shape
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        h, w = h + 2 * pad, w + 2 * pad
    h_out = (h - kh) // stride + 1
    w_out = (w - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise InvalidInputError("kernel larger than padded input")
    cols = np.empty((n * h_out * w_out, ch * kh * kw), dtype=np.float64)
    row = 0
    for i in range(n):
        for y in range(h_out):
            for xx in range(w_out):
                patch = x[i, :, y * stride : y * stride + kh, xx * stride : xx * stride + kw]
                cols[row] = patch.reshape(-1)
                row += 1
    return cols
