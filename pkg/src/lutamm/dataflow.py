"""On-chip memory cost models per GEMM loop order, plus a functional
(untimed) executor of the lookup-stationary schedule.

Loop-order names list the for-loops from outer to inner over the
(M x K) x (K x N) product; `LS` is the lookup-stationary order n -> k -> m.
Footprints are the minimum buffer sizes such that no region of the
precomputed lookup table is fetched from off-chip more than once. The
lookup-stationary order keeps one (subspace, output-tile) bank resident
(double-buffered so the next bank can prefetch) while rows stream, trading a
tile-sized scratchpad against whole-table residency.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .vq import Codebook, ProblemShape, VQConfig, build_lut, encode, _check_matrix


class DataflowKind(str, Enum):
    MNK = "mnk"
    NMK = "nmk"
    MKN = "mkn"
    KMN = "kmn"
    KNM = "knm"
    LS = "ls"  # n -> k -> m with a resident lookup bank


@dataclass(frozen=True)
class TileConfig:
    """Output tiling: `t_n` columns per tile, `m_tile` rows resident."""

    t_n: int
    m_tile: int | None = None  # None: all rows resident

    def __post_init__(self):
        if self.t_n < 1:
            raise ConfigurationError(f"t_n must be >= 1, got {self.t_n}")
        if self.m_tile is not None and self.m_tile < 1:
            raise ConfigurationError(f"m_tile must be >= 1, got {self.m_tile}")

    def n_o(self, n: int) -> int:
        return -(-n // self.t_n)

    def rows(self, m: int) -> int:
        return m if self.m_tile is None else min(self.m_tile, m)


@dataclass(frozen=True)
class BitWidths:
    bit_idx: int
    bit_lut: int = 8
    bit_psum: int = 16
    bit_out: int = 8

    def __post_init__(self):
        for name in ("bit_idx", "bit_lut", "bit_psum", "bit_out"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    @classmethod
    def for_config(cls, cfg: VQConfig, bit_lut: int = 8, bit_psum: int = 16,
                   bit_out: int = 8) -> "BitWidths":
        return cls(cfg.index_bits, bit_lut, bit_psum, bit_out)


BITS_PER_KB = 8192


@dataclass(frozen=True)
class MemoryFootprint:
    scratchpad_bits: int
    indices_bits: int
    psumlut_bits: int
    pingpong: bool

    @property
    def total_bits(self) -> int:
        return self.scratchpad_bits + self.indices_bits + self.psumlut_bits

    def kb(self, field: str = "total") -> float:
        bits = {
            "scratchpad": self.scratchpad_bits,
            "indices": self.indices_bits,
            "psumlut": self.psumlut_bits,
            "total": self.total_bits,
        }[field]
        return bits / BITS_PER_KB


def footprint(
    kind: DataflowKind,
    shape: ProblemShape,
    cfg: VQConfig,
    tile: TileConfig,
    widths: BitWidths,
) -> MemoryFootprint:
    """Minimum on-chip buffer bits for `kind` under the no-table-reload rule.

    Rules per loop order (n_c = ceil(K/v), n_o = ceil(N/t_n)):

        mnk   scratchpad one t_n output tile; a row's n_c indices live across
              the k sweep; every (k, n) bank is revisited per row, so the
              whole table must be resident.
        nmk   like mnk but only the current n-tile's table slab is resident.
        mkn   a full output row of partial sums; one index register; whole
              table resident.
        kmn   full output resident; one index register; one subspace's
              full-width table slab (c * N entries).
        knm   full output resident; the current subspace's rows of indices;
              a single (k, n) bank.
        ls    one (m_tile x t_n) output tile of partial sums; m_tile indices
              (current subspace, overwritten per k); one (k, n) bank,
              double-buffered so the next bank loads behind the active one.
    """
    kind = DataflowKind(kind)
    m, k, n = shape.m, shape.k, shape.n
    if tile.t_n > n:
        raise ConfigurationError(f"t_n={tile.t_n} exceeds N={n}")
    n_c = cfg.num_subspaces(k)
    c = cfg.c
    t_n = tile.t_n
    m_rows = tile.rows(m)
    full_table = n * c * n_c * widths.bit_lut
    if kind == DataflowKind.MNK:
        return MemoryFootprint(t_n * widths.bit_psum, n_c * widths.bit_idx, full_table, False)
    if kind == DataflowKind.NMK:
        return MemoryFootprint(
            t_n * widths.bit_psum, n_c * widths.bit_idx, c * n_c * t_n * widths.bit_lut, False
        )
    if kind == DataflowKind.MKN:
        return MemoryFootprint(n * widths.bit_psum, widths.bit_idx, full_table, False)
    if kind == DataflowKind.KMN:
        return MemoryFootprint(m * n * widths.bit_psum, widths.bit_idx, c * n * widths.bit_lut, False)
    if kind == DataflowKind.KNM:
        return MemoryFootprint(
            m * n * widths.bit_psum, m * widths.bit_idx, c * t_n * widths.bit_lut, False
        )
    return MemoryFootprint(
        m_rows * t_n * widths.bit_psum,
        m_rows * widths.bit_idx,
        2 * c * t_n * widths.bit_lut,
        True,
    )


def ls_execute(
    a: np.ndarray,
    b: np.ndarray,
    cfg: VQConfig,
    codebook: Codebook,
    tile: TileConfig,
    counters: dict | None = None,
) -> np.ndarray:
    """Run the lookup-stationary schedule functionally (no timing).

    Follows the n-tile -> subspace -> row loop nest: one (subspace, tile)
    bank is "resident" at a time, row indices are computed once per
    (row-block, tile) on the first subspace pass and served from the indices
    buffer afterwards. Output is bit-identical to `lut_gemm` because every
    element accumulates its partial sums in the same subspace-ascending
    order.

    Args:
        counters: optional dict; receives "get_index_calls" (one per row per
            tile, i.e. n_o * M in total) and "bank_loads".
    """
    a = _check_matrix(a, "input matrix")
    b = _check_matrix(b, "weight matrix")
    m, n = a.shape[0], b.shape[1]
    if tile.t_n > n:
        raise ConfigurationError(f"t_n={tile.t_n} exceeds N={n}")
    if tile.m_tile is not None and tile.m_tile > m:
        raise ConfigurationError(f"m_tile={tile.m_tile} exceeds M={m}")
    table = build_lut(codebook, b, cfg.lut_precision)
    dense = table.dense()
    n_c = codebook.n_c
    out = np.zeros((m, n), dtype=np.float64)
    get_index_calls = 0
    bank_loads = 0
    block = tile.rows(m)
    for m0 in range(0, m, block):
        m1 = min(m0 + block, m)
        for n0 in range(0, n, tile.t_n):
            n1 = min(n0 + tile.t_n, n)
            indices_buffer = None
            for k in range(n_c):
                bank = dense[k][:, n0:n1]  # active bank for this (k, tile)
                bank_loads += 1
                if k == 0:
                    # comparison side: one index-vector computation per row
                    indices_buffer = encode(a[m0:m1], codebook, cfg.metric, cfg.dist_precision)
                    get_index_calls += m1 - m0
                # matching side: query the bank and accumulate
                out[m0:m1, n0:n1] += bank[indices_buffer[:, k]]
    if counters is not None:
        counters["get_index_calls"] = get_index_calls
        counters["bank_loads"] = bank_loads
    return out


@dataclass(frozen=True)
class BandwidthRequirement:
    """Minimum sustained load rate to keep lookups from starving.

    `tiles_per_row_value` is the t_n * n_c / m * freq figure (tile entries
    per second); `bits_per_second` scales it to actual traffic, c * bit_lut
    bits per table load spread over the m-row pass that consumes one bank.
    """

    tiles_per_row_value: float
    bits_per_second: float


def min_bandwidth(
    shape: ProblemShape,
    cfg: VQConfig,
    tile: TileConfig,
    freq_hz: float,
    bit_lut: int = 8,
) -> BandwidthRequirement:
    """Bandwidth needed so computing m rows covers the next bank's load."""
    m = tile.rows(shape.m)
    if m < 1:
        raise InvalidInputError("need at least one resident row")
    n_c = cfg.num_subspaces(shape.k)
    value = tile.t_n * n_c / m * freq_hz
    bits = cfg.c * tile.t_n * bit_lut * freq_hz / m
    return BandwidthRequirement(value, bits)
