"""Analytical cost models and the heuristic co-design search.

Models (per candidate design point):

    tau    operation count: similarity comparisons plus accumulations,
           alpha_sim * c * M * v * ceil(K/v)  +  M * N * ceil(K/v)
           with alpha_sim = 2 for squared-L2 (multiply + add per element)
           and 1 for L1 / Chebyshev.
    phi    memory bits: table + outputs + encoded-input indices,
           N*c*ceil(K/v)*bit_lut + M*N*bit_out + ceil(K/v)*M*ceil(log2 c).
    area / power
           linear composition: unit_IMM * n_IMM + unit_CCU * n_CCU + other.
    omega  pipeline cycles: max of bank loading, similarity comparison and
           table lookup, max(c*bit_lut/beta * n_IMM, M*K/(v*n_CCU),
           M*N*K/(v * n_IMM * lut_banks)); the lookup term divides by the
           total lane count n_IMM * lut_banks.

The search prunes the candidate space in four steps (computation/memory vs
a dense-GEMM baseline, hardware area/power, a coarse accuracy probe, then a
lookup-first greedy parallelism expansion) and ranks survivors by omega.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace

from .errors import ConfigurationError, InvalidInputError
from .metrics import DistPrecision, LutPrecision, SimilarityMetric
from .vq import ProblemShape

ALPHA_SIM = {
    SimilarityMetric.L2: 2,
    SimilarityMetric.L1: 1,
    SimilarityMetric.CHEBYSHEV: 1,
}

_DIST_BITS = {DistPrecision.FP32: 32, DistPrecision.BF16: 16}
_LUT_BITS = {LutPrecision.FP32: 32, LutPrecision.INT8: 8}


@dataclass(frozen=True)
class CostTables:
    """Relative area/power units for the hardware cost model.

    Defaults are synthetic but order-consistent: per-element comparison cost
    decreases Chebyshev < L1 < L2 and bf16 < fp32. Absolute units cancel in
    every ratio the search works with; real silicon numbers can be loaded
    from a JSON calibration file.
    """

    dpe_area: dict
    dpe_power: dict
    sram_area_per_bit: float = 0.05
    sram_power_per_bit: float = 0.01
    adder_area: float = 2.0
    adder_power: float = 0.4
    other_area: float = 50.0
    other_power: float = 10.0

    def __post_init__(self):
        for metric in SimilarityMetric:
            for prec in DistPrecision:
                if self.dpe_cost(metric, prec, "area") <= 0:
                    raise ConfigurationError(f"non-positive dPE area for {metric}/{prec}")
        for prec in DistPrecision:
            a = {m: self.dpe_cost(m, prec, "area") for m in SimilarityMetric}
            if not (
                a[SimilarityMetric.CHEBYSHEV] <= a[SimilarityMetric.L1] <= a[SimilarityMetric.L2]
            ):
                raise ConfigurationError("dPE cost must order Chebyshev <= L1 <= L2")

    def dpe_cost(self, metric, precision, which: str) -> float:
        table = self.dpe_area if which == "area" else self.dpe_power
        try:
            return table[SimilarityMetric(metric).value][DistPrecision(precision).value]
        except KeyError as exc:
            raise ConfigurationError(f"missing dPE cost entry: {exc}") from exc

    @classmethod
    def default(cls) -> "CostTables":
        return cls(
            dpe_area={
                "l2": {"fp32": 8.0, "bf16": 3.0},
                "l1": {"fp32": 5.0, "bf16": 2.0},
                "chebyshev": {"fp32": 4.0, "bf16": 1.6},
            },
            dpe_power={
                "l2": {"fp32": 1.6, "bf16": 0.6},
                "l1": {"fp32": 1.0, "bf16": 0.4},
                "chebyshev": {"fp32": 0.8, "bf16": 0.32},
            },
        )

    @classmethod
    def from_json_file(cls, path: str) -> "CostTables":
        with open(path) as fh:
            obj = json.load(fh)
        return cls(**obj)


@dataclass(frozen=True)
class DesignPoint:
    v: int
    c: int
    metric: SimilarityMetric = SimilarityMetric.L2
    dist_precision: DistPrecision = DistPrecision.FP32
    lut_precision: LutPrecision = LutPrecision.INT8
    n_ccu: int = 1
    n_imm: int = 1
    lut_banks: int = 16
    t_n: int = 16
    beta: float = math.inf

    def __post_init__(self):
        if min(self.v, self.c, self.lut_banks, self.t_n) < 1:
            raise InvalidInputError(f"non-positive design parameter in {self}")
        if self.n_ccu < 0 or self.n_imm < 0:
            raise InvalidInputError("unit counts cannot be negative")
        object.__setattr__(self, "metric", SimilarityMetric(self.metric))
        object.__setattr__(self, "dist_precision", DistPrecision(self.dist_precision))
        object.__setattr__(self, "lut_precision", LutPrecision(self.lut_precision))

    @property
    def index_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.c))) if self.c > 1 else 1


@dataclass(frozen=True)
class Constraints:
    """Search bounds: ratios are relative to the dense-GEMM baseline."""

    max_tau_ratio: float = 1.0
    max_phi_ratio: float = 1.0
    max_area: float = math.inf
    max_power: float = math.inf
    min_accuracy: float = 0.0
    dense_width: int = 16  # bits per element in the dense baseline

    def __post_init__(self):
        for name in ("max_tau_ratio", "max_phi_ratio", "max_area", "max_power"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")


@dataclass(frozen=True)
class TauReport:
    op_sim: float
    op_add: float

    @property
    def total(self) -> float:
        return self.op_sim + self.op_add


@dataclass(frozen=True)
class PhiReport:
    mem_lut: float
    mem_out: float
    mem_in: float

    @property
    def total(self) -> float:
        return self.mem_lut + self.mem_out + self.mem_in


@dataclass(frozen=True)
class OmegaReport:
    load: float
    sim: float
    lut: float

    @property
    def cycles(self) -> float:
        return max(self.load, self.sim, self.lut)

    @property
    def binding(self) -> str:
        if self.lut >= self.sim and self.lut >= self.load:
            return "lut"
        return "sim" if self.sim >= self.load else "load"


def tau(shape: ProblemShape, v: int, c: int, metric=SimilarityMetric.L2,
        subspace_count_from: str = "k") -> TauReport:
    """Operation count of the lookup pipeline.

    `subspace_count_from` selects the similarity-term subspace factor:
    "k" (default) uses ceil(K/v); "c" reproduces the ceil(c/v) variant for
    side-by-side comparison.
    """
    alpha = ALPHA_SIM[SimilarityMetric(metric)]
    n_c = -(-shape.k // v)
    groups = n_c if subspace_count_from == "k" else -(-c // v)
    op_sim = alpha * c * shape.m * v * groups
    op_add = shape.m * shape.n * n_c
    return TauReport(float(op_sim), float(op_add))


def phi(shape: ProblemShape, v: int, c: int, bit_lut: int = 8, bit_out: int = 8) -> PhiReport:
    """Memory bits: table, outputs, and the encoded input index stream."""
    n_c = -(-shape.k // v)
    idx_bits = max(1, math.ceil(math.log2(c))) if c > 1 else 1
    return PhiReport(
        float(shape.n * c * n_c * bit_lut),
        float(shape.m * shape.n * bit_out),
        float(n_c * shape.m * idx_bits),
    )


def area_power(point: DesignPoint, tables: CostTables) -> tuple[float, float]:
    """Linear hardware cost: per-IMM and per-CCU units plus fixed overhead.

    A comparison unit carries v element lanes (cost set by metric and
    distance precision) plus the centroid buffer; a matching module carries
    the double-buffered bank pair plus its lookup-lane adders.
    """
    dist_bits = _DIST_BITS[point.dist_precision]
    lut_bits = _LUT_BITS[point.lut_precision]
    ccu_area = (
        point.v * tables.dpe_cost(point.metric, point.dist_precision, "area")
        + point.c * point.v * dist_bits * tables.sram_area_per_bit
    )
    ccu_power = (
        point.v * tables.dpe_cost(point.metric, point.dist_precision, "power")
        + point.c * point.v * dist_bits * tables.sram_power_per_bit
    )
    bank_bits = 2 * point.c * point.t_n * lut_bits
    imm_area = bank_bits * tables.sram_area_per_bit + point.lut_banks * tables.adder_area
    imm_power = bank_bits * tables.sram_power_per_bit + point.lut_banks * tables.adder_power
    area = imm_area * point.n_imm + ccu_area * point.n_ccu + tables.other_area
    power = imm_power * point.n_imm + ccu_power * point.n_ccu + tables.other_power
    return area, power


def omega(shape: ProblemShape, point: DesignPoint) -> OmegaReport:
    """Cycle model: max of bank loading, comparison, and lookup terms."""
    if point.beta <= 0:
        raise InvalidInputError("beta must be positive")
    if point.n_ccu < 1 or point.n_imm < 1:
        raise InvalidInputError("cycle model needs at least one CCU and one IMM")
    lut_bits = _LUT_BITS[point.lut_precision]
    load = 0.0 if math.isinf(point.beta) else point.c * lut_bits / point.beta * point.n_imm
    sim = shape.m * shape.k / (point.v * point.n_ccu)
    lut = shape.m * shape.n * shape.k / (point.v * point.n_imm * point.lut_banks)
    return OmegaReport(load, sim, lut)


def dense_baseline(shape: ProblemShape, width: int) -> tuple[float, float]:
    """Dense GEMM reference: 2MKN ops; A, B and C resident at `width` bits."""
    ops = 2.0 * shape.m * shape.k * shape.n
    bits = float((shape.m * shape.k + shape.k * shape.n + shape.m * shape.n) * width)
    return ops, bits


@dataclass(frozen=True)
class SearchSpace:
    v_values: tuple
    c_values: tuple
    metrics: tuple = (SimilarityMetric.L2,)
    n_ccu_values: tuple = (1,)
    n_imm_values: tuple = (1,)
    lut_banks_values: tuple = (16,)
    t_n_values: tuple = (16,)
    beta: float = math.inf
    dist_precision: DistPrecision = DistPrecision.FP32
    lut_precision: LutPrecision = LutPrecision.INT8

    def points(self):
        for v, c, metric, n_ccu, n_imm, banks, t_n in itertools.product(
            self.v_values,
            self.c_values,
            self.metrics,
            self.n_ccu_values,
            self.n_imm_values,
            self.lut_banks_values,
            self.t_n_values,
        ):
            yield DesignPoint(
                v=v, c=c, metric=metric,
                dist_precision=self.dist_precision, lut_precision=self.lut_precision,
                n_ccu=n_ccu, n_imm=n_imm, lut_banks=banks, t_n=t_n, beta=self.beta,
            )


@dataclass(frozen=True)
class RankedDesign:
    point: DesignPoint
    omega: OmegaReport
    area: float
    power: float
    tau_total: float
    phi_total: float


@dataclass
class SearchResult:
    steps: dict  # step name -> surviving DesignPoints (pre-expansion points)
    ranked: list  # RankedDesign, best first
    pruned: dict  # step name -> {constraint name -> pruned count}
    infeasible_step: str | None = None

    @property
    def feasible(self) -> bool:
        return self.infeasible_step is None


def expand_parallelism(
    point: DesignPoint, shape: ProblemShape, constraints: Constraints, tables: CostTables
) -> DesignPoint:
    """Lookup-first greedy: add matching modules while lookups bind.

    Stops at the area/power bound, when another term starts binding, or when
    an extra module would no longer reduce the cycle count.
    """
    while True:
        report = omega(shape, point)
        if report.binding != "lut":
            break
        cand = replace(point, n_imm=point.n_imm + 1)
        area, power = area_power(cand, tables)
        if area > constraints.max_area or power > constraints.max_power:
            break
        if omega(shape, cand).cycles > report.cycles:
            break
        point = cand
    return point


def search(
    space: SearchSpace,
    shape: ProblemShape,
    constraints: Constraints,
    tables: CostTables | None = None,
    probe=None,
    probe_budget: int = 0,
) -> SearchResult:
    """Four-step heuristic pruning plus ranking by the cycle model.

    Args:
        probe: optional callable (v, c, metric) -> estimated accuracy used in
            step 3; results are cached per (v, c, metric). When omitted the
            accuracy step keeps every point.
        probe_budget: iteration budget forwarded to the probe.

    Returns:
        SearchResult with per-step survivor sets, the expanded and ranked
        designs, and per-step pruning reasons. An emptied step marks the
        result infeasible and records which constraints did it.
    """
    tables = tables or CostTables.default()
    dense_ops, dense_bits = dense_baseline(shape, constraints.dense_width)
    steps: dict = {}
    pruned: dict = {}

    candidates = list(space.points())
    if not candidates:
        raise InvalidInputError("empty search space")

    survivors, removed = [], {"tau": 0, "phi": 0}
    for p in candidates:
        t = tau(shape, p.v, p.c, p.metric).total
        f = phi(shape, p.v, p.c, bit_lut=_LUT_BITS[p.lut_precision]).total
        ok = True
        if t > constraints.max_tau_ratio * dense_ops:
            removed["tau"] += 1
            ok = False
        if f > constraints.max_phi_ratio * dense_bits:
            removed["phi"] += 1
            ok = False
        if ok:
            survivors.append(p)
    steps["computation_memory"] = survivors
    pruned["computation_memory"] = removed

    prev, survivors, removed = survivors, [], {"area": 0, "power": 0}
    for p in prev:
        area, power = area_power(p, tables)
        ok = True
        if area > constraints.max_area:
            removed["area"] += 1
            ok = False
        if power > constraints.max_power:
            removed["power"] += 1
            ok = False
        if ok:
            survivors.append(p)
    steps["hardware"] = survivors
    pruned["hardware"] = removed

    prev, survivors, removed = survivors, [], {"accuracy": 0}
    cache: dict = {}
    for p in prev:
        if probe is None:
            survivors.append(p)
            continue
        key = (p.v, p.c, p.metric)
        if key not in cache:
            cache[key] = probe(p.v, p.c, p.metric)
        if cache[key] >= constraints.min_accuracy:
            survivors.append(p)
        else:
            removed["accuracy"] += 1
    steps["accuracy"] = survivors
    pruned["accuracy"] = removed

    expanded = [expand_parallelism(p, shape, constraints, tables) for p in survivors]
    steps["expanded"] = expanded

    ranked = []
    for p in expanded:
        rep = omega(shape, p)
        area, power = area_power(p, tables)
        ranked.append(
            RankedDesign(
                point=p,
                omega=rep,
                area=area,
                power=power,
                tau_total=tau(shape, p.v, p.c, p.metric).total,
                phi_total=phi(shape, p.v, p.c, bit_lut=_LUT_BITS[p.lut_precision]).total,
            )
        )
    ranked.sort(key=lambda r: (r.omega.cycles, r.area, r.point.v, r.point.c))

    infeasible = None
    for name in ("computation_memory", "hardware", "accuracy"):
        if not steps[name]:
            infeasible = name
            break
    return SearchResult(steps=steps, ranked=ranked, pruned=pruned, infeasible_step=infeasible)


def heatmap_rows(points, shape: ProblemShape) -> list:
    """Aggregate survivors onto the (v, c) plane for heatmap CSVs."""
    cells: dict = {}
    for p in points:
        key = (p.v, p.c)
        cyc = omega(shape, p).cycles
        count, best = cells.get(key, (0, math.inf))
        cells[key] = (count + 1, min(best, cyc))
    return [
        {"v": v, "c": c, "count": count, "best_omega": best}
        for (v, c), (count, best) in sorted(cells.items())
    ]
