"""Cycle-accurate model of the lookup accelerator.

Modeled hardware:

  - one comparison module (CCM) with `n_ccu` comparison units; each unit
    streams an input subvector through a chain of `dpes_per_ccu` pipelined
    distance elements (one centroid comparison per element per CCM cycle),
    carrying the running minimum distance and index down the chain,
  - `n_imm` matching modules (IMMs), each with an indices buffer, a
    ping-pong pair of lookup banks serving `lut_banks` lookup-accumulate
    lanes per IMM cycle, and a scratchpad accumulator,
  - asynchronous FIFOs (one per comparison unit, `fifo_depth` entries each)
    decoupling the two clock domains,
  - one shared off-chip load port delivering `beta` bits per IMM cycle.

Timing rules (deterministic; every quantity is an integer in a common
sub-cycle unit so runs are exactly reproducible):

  1. Schedule: the lookup-stationary loop nest. Output tiles are dealt
     round-robin to IMMs; within a tile, subspaces advance in order and the
     resident row-block streams through each (subspace, tile) segment.
  2. Each (row, subspace) index is computed once per row-block, during the
     first tile round, and served from the indices buffer for later tiles.
     CCM throughput is one comparison result per unit per ceil(c / dpes)
     CCM cycles, after a c-cycle pipeline fill per row-block.
  3. An IMM retires `lut_banks` lookup-accumulates per IMM cycle; switching
     to the next bank costs one IMM cycle.
  4. The next segment's bank prefetches into the shadow bank while the
     active one is consumed. Loads serialize through the port in segment
     order at `beta` bits per IMM cycle; a bank is never read while loading.
  5. Only table traffic is metered against `beta`; inputs, indices and
     outputs ride dedicated paths. Centroids are resident on chip.

Stall attribution (IMM side): `fifo_empty` = waiting for an index not yet
produced, `bandwidth` = waiting while the port serves earlier requests,
`lut_load` = waiting for the in-flight load of the own next bank, `other` =
bank-swap overhead plus idle tails. `fifo_full` is CCM-side backpressure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataflow import TileConfig, ls_execute
from .errors import ConfigurationError, FunctionalMismatch, SimulationDeadlock
from .metrics import LutPrecision
from .vq import Codebook, ProblemShape, VQConfig, build_lut, encode

__all__ = ["HwConfig", "SimTrace", "simulate", "replay_functional", "steady_state_check"]


@dataclass(frozen=True)
class HwConfig:
    """Hardware parallelism and clocking parameters."""

    tile: TileConfig
    n_ccu: int = 1
    dpes_per_ccu: int | None = None  # None: one element per centroid
    n_imm: int = 1
    lut_banks: int = 16
    fifo_depth: int = 8
    ccm_freq: int = 1
    imm_freq: int = 1
    beta: float | None = None  # bits per IMM cycle; None = unconstrained

    def __post_init__(self):
        for name in ("n_ccu", "n_imm", "lut_banks", "fifo_depth", "ccm_freq", "imm_freq"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.dpes_per_ccu is not None and self.dpes_per_ccu < 1:
            raise ConfigurationError("dpes_per_ccu must be >= 1")
        if self.ccm_freq % self.imm_freq != 0:
            raise ConfigurationError(
                f"ccm_freq={self.ccm_freq} must be an integer multiple of imm_freq={self.imm_freq}"
            )

    @property
    def freq_ratio(self) -> int:
        return self.ccm_freq // self.imm_freq


@dataclass
class SimTrace:
    """Cycle counts (IMM domain unless noted) and observability counters."""

    total_cycles: int
    imm_busy_cycles: float  # summed over IMMs
    ccm_busy_cycles: float  # CCM clock domain
    sim_term_cycles: float  # CCM production time converted to IMM cycles
    loader_busy_cycles: float
    fifo_high_water: int
    stalls: dict
    total_lookups: int
    n_imm: int
    per_imm: list = field(default_factory=list)
    output: np.ndarray | None = None
    events: list | None = None

    def binding(self) -> str:
        """Dominant pipeline phase, reconstructed from the trace.

        Compares the critical lookup time (busiest IMM), the intrinsic index
        production time, and the worst per-IMM bank-wait; ties resolve in
        that order.
        """
        lut_dur = max((st["busy_cycles"] for st in self.per_imm), default=0.0)
        load_dur = max((st["load_wait_cycles"] for st in self.per_imm), default=0.0)
        if lut_dur >= self.sim_term_cycles and lut_dur >= load_dur:
            return "lut"
        return "sim" if self.sim_term_cycles >= load_dur else "load"

    def to_json_dict(self) -> dict:
        return {
            "total_cycles": self.total_cycles,
            "imm_busy_cycles": self.imm_busy_cycles,
            "ccm_busy_cycles": self.ccm_busy_cycles,
            "sim_term_cycles": self.sim_term_cycles,
            "loader_busy_cycles": self.loader_busy_cycles,
            "fifo_high_water": self.fifo_high_water,
            "stalls": self.stalls,
            "total_lookups": self.total_lookups,
            "n_imm": self.n_imm,
            "per_imm": self.per_imm,
            "binding": self.binding(),
        }


def _lut_bits(precision: LutPrecision) -> int:
    return 8 if precision == LutPrecision.INT8 else 32


class _LoadPort:
    """Single off-chip port; serves bank requests in segment order."""

    def __init__(self, beta, scale):
        self.beta = beta
        self.scale = scale
        self.free = 0
        self.busy_units = 0

    def serve(self, issue_units: int, bits: int):
        if self.beta is None:
            return issue_units, issue_units
        cycles = math.ceil(bits / self.beta)
        units = cycles * self.scale
        start = max(self.free, issue_units)
        self.free = start + units
        self.busy_units += units
        return self.free, start


def simulate(
    shape: ProblemShape,
    cfg: VQConfig,
    hw: HwConfig,
    a: np.ndarray | None = None,
    b: np.ndarray | None = None,
    codebook: Codebook | None = None,
    collect_events: bool = False,
) -> SimTrace:
    """Run the timing model; optionally compute the product alongside.

    When `a`, `b` and `codebook` are given, the trace carries the functional
    output, accumulated in the exact segment order the hardware would retire,
    which is bit-identical to `lut_gemm` / `ls_execute`.
    """
    m, k_dim, n = shape.m, shape.k, shape.n
    if hw.tile.t_n > n:
        raise ConfigurationError(f"t_n={hw.tile.t_n} exceeds N={n}")
    n_c = cfg.num_subspaces(k_dim)
    c = cfg.c
    bit_lut = _lut_bits(cfg.lut_precision)
    if hw.beta is not None and hw.beta <= 0:
        raise SimulationDeadlock(
            "bank loads can never complete at zero bandwidth (100% bandwidth stall)",
            fifo_state={"occupancy": 0, "depth": hw.fifo_depth * hw.n_ccu},
        )

    functional = a is not None
    if functional:
        if b is None or codebook is None:
            raise ConfigurationError("functional mode needs a, b and codebook together")
        indices = encode(a, codebook, cfg.metric, cfg.dist_precision)
        dense = build_lut(codebook, b, cfg.lut_precision).dense()
        out = np.zeros((m, n), dtype=np.float64)
    else:
        out = None

    r = hw.freq_ratio
    lanes = hw.lut_banks
    scale = lanes * hw.n_ccu * r  # sub-cycle units per IMM cycle
    row_units = hw.n_ccu * r  # per output column of one row
    ii = math.ceil(c / (hw.dpes_per_ccu or c))
    period = ii * lanes  # units between CCM results (aggregated units)
    fill_units = c * lanes * hw.n_ccu  # c CCM cycles at the ratio
    swap_units = scale  # one IMM cycle per bank handover
    depth = hw.fifo_depth * hw.n_ccu

    t_n = hw.tile.t_n
    n_o = hw.tile.n_o(n)
    tiles = [(i * t_n, min((i + 1) * t_n, n)) for i in range(n_o)]
    block = hw.tile.rows(m)
    blocks = [(m0, min(m0 + block, m)) for m0 in range(0, m, block)]

    port = _LoadPort(hw.beta, scale)
    imm_end = [0] * hw.n_imm
    imm_issue = [0] * hw.n_imm  # issue time for the next bank request
    imm_seg = [0] * hw.n_imm  # segments processed so far
    busy_units = [0] * hw.n_imm
    stall_units = {"lut_load": 0, "fifo_full": 0, "fifo_empty": 0, "bandwidth": 0, "other": 0}
    per_imm_stats = [dict(busy=0, fifo_empty=0, load_wait=0) for _ in range(hw.n_imm)]
    total_lookups = 0
    events = [] if collect_events else None

    # CCM production stream: one entry per (row, subspace), block-major then
    # subspace-major then row. pop_times[s] is when the last first-round
    # consumer read stream element s (FIFO backpressure window).
    ccm_clock = 0
    pop_times: list[int] = []
    high_water = 0
    hw_ptr = 0  # pops with pop_time <= current production time
    ccm_stall_units = 0

    def start_segment(j: int, width: int):
        """Resolve bank readiness and swap for IMM j; returns segment start."""
        bits = c * width * bit_lut
        ready, svc_start = port.serve(imm_issue[j], bits)
        prev = imm_end[j]
        wait = max(0, ready - prev)
        if wait:
            queued = min(wait, max(0, svc_start - prev))
            stall_units["bandwidth"] += queued
            stall_units["lut_load"] += wait - queued
            per_imm_stats[j]["load_wait"] += wait
        start = max(prev, ready) + swap_units
        stall_units["other"] += swap_units
        if events is not None:
            events.append(
                {"cycle": start // scale, "unit": f"imm{j}", "action": "segment_start"}
            )
        return start

    for b0, b1 in blocks:
        rows = b1 - b0
        ccm_filled = False
        rounds = math.ceil(n_o / hw.n_imm)
        for rnd in range(rounds):
            active = [
                (j, rnd * hw.n_imm + j)
                for j in range(hw.n_imm)
                if rnd * hw.n_imm + j < n_o
            ]
            if rnd == 0:
                # First round consumes the CCM index stream subspace by
                # subspace; rows walk in lockstep across the active IMMs.
                for k in range(n_c):
                    cursors = {}
                    widths = {}
                    seg_starts = {}
                    for j, t in active:
                        n0, n1 = tiles[t]
                        widths[j] = n1 - n0
                        seg_starts[j] = start_segment(j, widths[j])
                        cursors[j] = seg_starts[j]
                    for i in range(rows):
                        s = len(pop_times)
                        if not ccm_filled:
                            ccm_clock += fill_units
                            ccm_filled = True
                        gate = pop_times[s - depth] if s >= depth else 0
                        prod = max(ccm_clock + period, gate)
                        ccm_stall_units += max(0, gate - (ccm_clock + period))
                        ccm_clock = prod
                        pop = 0
                        for j, t in active:
                            rs = max(cursors[j], prod)
                            if rs > cursors[j]:
                                stall_units["fifo_empty"] += rs - cursors[j]
                                per_imm_stats[j]["fifo_empty"] += rs - cursors[j]
                            cursors[j] = rs + widths[j] * row_units
                            pop = max(pop, rs)
                        pop_times.append(pop)
                        while hw_ptr < len(pop_times) and pop_times[hw_ptr] <= prod:
                            hw_ptr += 1
                        high_water = max(high_water, len(pop_times) - hw_ptr)
                    for j, t in active:
                        seg_busy = rows * widths[j] * row_units
                        busy_units[j] += seg_busy
                        per_imm_stats[j]["busy"] += seg_busy
                        total_lookups += rows * widths[j]
                        imm_issue[j] = 0 if imm_seg[j] == 0 else seg_starts[j]
                        imm_seg[j] += 1
                        imm_end[j] = cursors[j]
                        if functional:
                            n0, n1 = tiles[t]
                            out[b0:b1, n0:n1] += dense[k][indices[b0:b1, k], n0:n1]
            else:
                for k in range(n_c):
                    for j, t in active:
                        n0, n1 = tiles[t]
                        width = n1 - n0
                        start = start_segment(j, width)
                        seg_busy = rows * width * row_units
                        busy_units[j] += seg_busy
                        per_imm_stats[j]["busy"] += seg_busy
                        total_lookups += rows * width
                        imm_issue[j] = 0 if imm_seg[j] == 0 else start
                        imm_seg[j] += 1
                        imm_end[j] = start + seg_busy
                        if functional:
                            out[b0:b1, n0:n1] += dense[k][indices[b0:b1, k], n0:n1]

    end_units = max(imm_end) if imm_end else 0
    total_cycles = math.ceil(end_units / scale)
    # idle tails of IMMs that finished before the slowest one
    for j in range(hw.n_imm):
        stall_units["other"] += end_units - imm_end[j]
    stalls = {key: units / scale for key, units in stall_units.items()}
    stalls["fifo_full"] = ccm_stall_units / scale
    per_imm = [
        {
            "busy_cycles": st["busy"] / scale,
            "fifo_empty_cycles": st["fifo_empty"] / scale,
            "load_wait_cycles": st["load_wait"] / scale,
        }
        for st in per_imm_stats
    ]
    n_blocks = len(blocks)
    ccm_busy = n_blocks * c + m * n_c * ii / hw.n_ccu
    trace = SimTrace(
        total_cycles=total_cycles,
        imm_busy_cycles=sum(busy_units) / scale,
        ccm_busy_cycles=ccm_busy,
        sim_term_cycles=ccm_busy / r,
        loader_busy_cycles=port.busy_units / scale,
        fifo_high_water=high_water,
        stalls=stalls,
        total_lookups=total_lookups,
        n_imm=hw.n_imm,
        per_imm=per_imm,
        output=out,
        events=events,
    )
    return trace


def replay_functional(
    a: np.ndarray,
    b: np.ndarray,
    cfg: VQConfig,
    codebook: Codebook,
    hw: HwConfig,
) -> np.ndarray:
    """Functional/timing co-verification: simulate and cross-check.

    Runs the simulator in functional mode and compares its output against the
    untimed lookup-stationary executor; raises on the first divergent cell.
    """
    trace = simulate(
        ProblemShape(a.shape[0], a.shape[1], b.shape[1]), cfg, hw, a=a, b=b, codebook=codebook
    )
    want = ls_execute(a, b, cfg, codebook, hw.tile)
    if not np.array_equal(trace.output, want):
        bad = np.argwhere(trace.output != want)
        row, col = (int(bad[0][0]), int(bad[0][1]))
        raise FunctionalMismatch(row, col, trace.output[row, col], want[row, col])
    return trace.output


def steady_state_check(trace: SimTrace, hw: HwConfig, shape: ProblemShape, cfg: VQConfig):
    """Compare a finished simulation against the analytical cycle model."""
    from .dse import DesignPoint, omega

    point = DesignPoint(
        v=cfg.v,
        c=cfg.c,
        metric=cfg.metric,
        dist_precision=cfg.dist_precision,
        lut_precision=cfg.lut_precision,
        n_ccu=hw.n_ccu,
        n_imm=hw.n_imm,
        lut_banks=hw.lut_banks,
        t_n=hw.tile.t_n,
        beta=hw.beta if hw.beta is not None else math.inf,
    )
    model = omega(shape, point)
    sim_binding = trace.binding()
    return {
        "model_cycles": model.cycles,
        "model_binding": model.binding,
        "model_terms": {"load": model.load, "sim": model.sim, "lut": model.lut},
        "sim_cycles": trace.total_cycles,
        "sim_binding": sim_binding,
        "binding_match": model.binding == sim_binding,
        "cycle_ratio": trace.total_cycles / model.cycles if model.cycles else math.inf,
    }
