"""Command-line front end.

Subcommands: convert (multistage model conversion), amm (approximate GEMM on
matrix files), simulate (cycle model), dataflow (footprint sweep), dse
(co-design search). One JSON config file carries per-subcommand sections;
unknown keys are rejected. Every output embeds a provenance record (config
hash, seed, package version). Summary JSON files contain only deterministic
fields, so reruns with the same seed are byte-identical.

Exit codes: 0 success, 1 internal error, 2 invalid input, 3 infeasible DSE.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__, container, dse
from .dataflow import BitWidths, DataflowKind, TileConfig, footprint
from .datasets import split, two_moons
from .errors import ConfigurationError, InvalidInputError, TrainingDiverged
from .metrics import SimilarityMetric
from .simulator import HwConfig, simulate
from .trainer import (
    Stage,
    TrainConfig,
    TrainData,
    build_mlp,
    load_checkpoint,
    quick_accuracy_probe,
    save_checkpoint,
    substitute,
    train_stage,
)
from .vq import ProblemShape, VQConfig, amm_error, build_lut, encode, fit_codebook, lut_gemm

_VQ_KEYS = {"v", "c", "metric", "dist_precision", "lut_precision"}
_STAGE_KEYS = {"lr", "iterations", "lam_re", "batch_size"}
_SCHEMA = {
    "seed": None,
    "convert": {
        "task": None, "model": None, "samples": None, "noise": None, "dims": None,
        "dense": _STAGE_KEYS, "vq": _VQ_KEYS,
        "centroid_stage": _STAGE_KEYS, "joint_stage": _STAGE_KEYS,
    },
    "amm": {"a": None, "b": None, "vq": _VQ_KEYS, "kmeans_seed": None},
    "simulate": {
        "shape": None, "vq": _VQ_KEYS,
        "hw": {"t_n", "m_tile", "n_ccu", "dpes_per_ccu", "n_imm", "lut_banks",
               "fifo_depth", "ccm_freq", "imm_freq", "beta"},
    },
    "dataflow": {
        "shape": None, "vq": _VQ_KEYS, "tile": {"t_n", "m_tile"},
        "widths": {"bit_idx", "bit_lut", "bit_psum", "bit_out"},
    },
    "dse": {
        "shape": None,
        "space": {"v_values", "c_values", "metrics", "n_ccu_values", "n_imm_values",
                  "lut_banks_values", "t_n_values", "beta", "dist_precision", "lut_precision"},
        "constraints": {"max_tau_ratio", "max_phi_ratio", "max_area", "max_power",
                        "min_accuracy", "dense_width"},
        "cost_tables": None,
        "probe": {"task", "budget", "samples", "noise", "dims", "dense_iterations"},
    },
}


def _validate_keys(obj, schema, path="config"):
    if not isinstance(obj, dict):
        return
    for key, value in obj.items():
        if key not in schema:
            raise InvalidInputError(f"{path}: unknown key {key!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            _validate_keys(value, sub, f"{path}.{key}")
        elif isinstance(sub, set) and isinstance(value, dict):
            for k in value:
                if k not in sub:
                    raise InvalidInputError(f"{path}.{key}: unknown key {k!r}")


def _load_config(path: str) -> tuple[dict, str]:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    _validate_keys(cfg, _SCHEMA)
    digest = hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode("utf-8")
    ).hexdigest()[:16]
    return cfg, digest


def _provenance(digest: str, seed: int) -> dict:
    return {"config_sha256": digest, "seed": seed, "version": __version__}


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header: list, rows: list, provenance: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(
            f"# config={provenance['config_sha256']} seed={provenance['seed']} "
            f"version={provenance['version']}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _vq_config(section: dict) -> VQConfig:
    return VQConfig(
        v=int(section["v"]),
        c=int(section["c"]),
        metric=section.get("metric", "l2"),
        dist_precision=section.get("dist_precision", "fp32"),
        lut_precision=section.get("lut_precision", "fp32"),
    )


def _load_matrix_any(path: str) -> np.ndarray:
    if path.endswith(".csv"):
        return container.load_matrix_csv(path)
    return container.load_matrix(path)


def _stage(section: dict, stage: Stage, seed: int) -> TrainConfig:
    return TrainConfig(
        stage,
        lr=float(section.get("lr", 0.1)),
        iterations=int(section.get("iterations", 100)),
        lam_re=float(section.get("lam_re", 0.05)),
        seed=seed,
        batch_size=int(section.get("batch_size", 32)),
    )


def _toy_data(section: dict, seed: int) -> TrainData:
    task = section.get("task", "two_moons")
    if task != "two_moons":
        raise InvalidInputError(f"unknown task {task!r}")
    x, y = two_moons(
        int(section.get("samples", 400)), float(section.get("noise", 0.15)), seed=seed
    )
    return TrainData(*split(x, y))


def _stage_csv(path: str, report, provenance) -> None:
    rows = [
        [i, f"{t:.10g}", f"{r:.10g}", f"{a:.10g}"]
        for i, (t, r, a) in enumerate(
            zip(report.task_loss, report.re_loss, report.val_acc)
        )
    ]
    _write_csv(path, ["iter", "task_loss", "re_loss", "val_acc"], rows, provenance)


def cmd_convert(cfg: dict, digest: str, seed: int, out: str, verbose: bool) -> int:
    section = cfg.get("convert")
    if not section:
        raise InvalidInputError("config has no 'convert' section")
    prov = _provenance(digest, seed)
    data = _toy_data(section, seed)
    if "model" in section and section["model"]:
        net = load_checkpoint(section["model"])
    else:
        dims = section.get("dims", [2, 16, 2])
        net = build_mlp(dims, seed=seed + 100)
        dense_cfg = _stage(section.get("dense", {"lr": 0.5, "iterations": 400,
                                                 "lam_re": 0.0, "batch_size": 64}),
                           Stage.JOINT, seed + 200)
        train_stage(net, data, dense_cfg)
    vq_cfg = _vq_config(section["vq"])
    lut_net = substitute(net, vq_cfg, data.x_train, seed=seed + 300)
    rep2 = train_stage(lut_net, data, _stage(section.get("centroid_stage", {}),
                                             Stage.CENTROID_ONLY, seed + 400))
    rep3 = train_stage(lut_net, data, _stage(section.get("joint_stage", {}),
                                             Stage.JOINT, seed + 500))
    save_checkpoint(os.path.join(out, "checkpoint.lamm"), lut_net)
    _stage_csv(os.path.join(out, "centroid_stage.csv"), rep2, prov)
    _stage_csv(os.path.join(out, "joint_stage.csv"), rep3, prov)
    # wall times stay out of the summary: reruns must be byte-identical
    _write_json(
        os.path.join(out, "summary.json"),
        {
            "provenance": prov,
            "final_val_accuracy": rep3.val_acc[-1],
            "centroid_stage": {"iterations": len(rep2.task_loss),
                               "final_task_loss": rep2.task_loss[-1],
                               "final_val_accuracy": rep2.val_acc[-1]},
            "joint_stage": {"iterations": len(rep3.task_loss),
                            "final_task_loss": rep3.task_loss[-1],
                            "final_val_accuracy": rep3.val_acc[-1]},
        },
    )
    if verbose:
        print(f"convert: final val accuracy {rep3.val_acc[-1]:.4f}")
    return 0


def cmd_amm(cfg: dict, digest: str, seed: int, out: str, verbose: bool) -> int:
    section = cfg.get("amm")
    if not section:
        raise InvalidInputError("config has no 'amm' section")
    prov = _provenance(digest, seed)
    a = _load_matrix_any(section["a"])
    b = _load_matrix_any(section["b"])
    if a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"shape mismatch: {a.shape} @ {b.shape}")
    vq_cfg = _vq_config(section["vq"])
    codebook = fit_codebook(a, vq_cfg, seed=int(section.get("kmeans_seed", seed)))
    table = build_lut(codebook, b, vq_cfg.lut_precision)
    result = lut_gemm(encode(a, codebook, vq_cfg.metric, vq_cfg.dist_precision), table)
    container.save_matrix_csv(os.path.join(out, "c.csv"), result)
    err = amm_error(a, b, vq_cfg, codebook)
    shape = ProblemShape(a.shape[0], a.shape[1], b.shape[1])
    tau_rep = dse.tau(shape, vq_cfg.v, vq_cfg.c, vq_cfg.metric)
    phi_rep = dse.phi(shape, vq_cfg.v, vq_cfg.c)
    _write_json(
        os.path.join(out, "report.json"),
        {
            "provenance": prov,
            "shape": [shape.m, shape.k, shape.n],
            "frobenius_rel": err.frobenius_rel,
            "max_abs": err.max_abs,
            "exact_norm_zero": err.exact_norm_zero,
            "tau": {"op_sim": tau_rep.op_sim, "op_add": tau_rep.op_add, "total": tau_rep.total},
            "phi": {"mem_lut": phi_rep.mem_lut, "mem_out": phi_rep.mem_out,
                    "mem_in": phi_rep.mem_in, "total": phi_rep.total},
        },
    )
    if verbose:
        print(f"amm: frobenius_rel={err.frobenius_rel}")
    return 0


def cmd_simulate(cfg: dict, digest: str, seed: int, out: str, verbose: bool) -> int:
    section = cfg.get("simulate")
    if not section:
        raise InvalidInputError("config has no 'simulate' section")
    prov = _provenance(digest, seed)
    m, k, n = (int(x) for x in section["shape"])
    vq_cfg = _vq_config(section["vq"])
    hw_sec = dict(section.get("hw", {}))
    beta = hw_sec.pop("beta", None)
    m_tile = hw_sec.pop("m_tile", None)
    tile = TileConfig(int(hw_sec.pop("t_n", 16)), None if m_tile is None else int(m_tile))
    hw = HwConfig(tile=tile, beta=None if beta is None else float(beta),
                  **{k2: int(v2) for k2, v2 in hw_sec.items() if v2 is not None})
    trace = simulate(ProblemShape(m, k, n), vq_cfg, hw, collect_events=verbose)
    payload = {"provenance": prov, "shape": [m, k, n], **trace.to_json_dict()}
    _write_json(os.path.join(out, "trace.json"), payload)
    if verbose and trace.events is not None:
        with open(os.path.join(out, "events.jsonl"), "w") as fh:
            for event in trace.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        print(f"simulate: {trace.total_cycles} cycles, binding {trace.binding()}")
    return 0


def cmd_dataflow(cfg: dict, digest: str, seed: int, out: str, verbose: bool) -> int:
    section = cfg.get("dataflow")
    if not section:
        raise InvalidInputError("config has no 'dataflow' section")
    prov = _provenance(digest, seed)
    m, k, n = (int(x) for x in section["shape"])
    shape = ProblemShape(m, k, n)
    vq_cfg = _vq_config(section["vq"])
    tile_sec = section.get("tile", {})
    tile = TileConfig(int(tile_sec.get("t_n", 16)), tile_sec.get("m_tile"))
    wsec = section.get("widths", {})
    widths = BitWidths(
        bit_idx=int(wsec.get("bit_idx", vq_cfg.index_bits)),
        bit_lut=int(wsec.get("bit_lut", 8)),
        bit_psum=int(wsec.get("bit_psum", 16)),
        bit_out=int(wsec.get("bit_out", 8)),
    )
    rows = []
    for kind in DataflowKind:
        fp = footprint(kind, shape, vq_cfg, tile, widths)
        rows.append([
            kind.value,
            f"{fp.kb('scratchpad'):.6g}", f"{fp.kb('indices'):.6g}",
            f"{fp.kb('psumlut'):.6g}", f"{fp.kb('total'):.6g}",
            int(fp.pingpong),
        ])
    _write_csv(
        os.path.join(out, "footprints.csv"),
        ["dataflow", "scratchpad_kb", "indices_kb", "psumlut_kb", "total_kb", "pingpong"],
        rows,
        prov,
    )
    if verbose:
        for row in rows:
            print("dataflow:", row)
    return 0


def cmd_dse(cfg: dict, digest: str, seed: int, out: str, verbose: bool) -> int:
    section = cfg.get("dse")
    if not section:
        raise InvalidInputError("config has no 'dse' section")
    prov = _provenance(digest, seed)
    m, k, n = (int(x) for x in section["shape"])
    shape = ProblemShape(m, k, n)
    space_sec = dict(section["space"])
    beta = space_sec.pop("beta", None)
    space = dse.SearchSpace(
        v_values=tuple(space_sec["v_values"]),
        c_values=tuple(space_sec["c_values"]),
        metrics=tuple(SimilarityMetric(x) for x in space_sec.get("metrics", ["l2"])),
        n_ccu_values=tuple(space_sec.get("n_ccu_values", [1])),
        n_imm_values=tuple(space_sec.get("n_imm_values", [1])),
        lut_banks_values=tuple(space_sec.get("lut_banks_values", [16])),
        t_n_values=tuple(space_sec.get("t_n_values", [16])),
        beta=math.inf if beta is None else float(beta),
        dist_precision=space_sec.get("dist_precision", "fp32"),
        lut_precision=space_sec.get("lut_precision", "int8"),
    )
    constraints = dse.Constraints(**{
        key: value for key, value in section.get("constraints", {}).items()
    })
    tables = (
        dse.CostTables.from_json_file(section["cost_tables"])
        if section.get("cost_tables")
        else dse.CostTables.default()
    )
    probe_sec = section.get("probe")
    probe = None
    probe_note = "accuracy step skipped: no probe configured"
    if probe_sec:
        data = _toy_data(probe_sec, seed)
        base = build_mlp(probe_sec.get("dims", [2, 16, 2]), seed=seed + 100)
        train_stage(
            base, data,
            TrainConfig(Stage.JOINT, lr=0.5,
                        iterations=int(probe_sec.get("dense_iterations", 400)),
                        lam_re=0.0, seed=seed + 200, batch_size=64),
        )
        budget = int(probe_sec.get("budget", 15))
        probe_note = (
            "accuracy probe runs centroid-only training on the two-moons toy task; "
            "a stand-in for model-specific probes at desk scale"
        )

        def probe(v, c, metric):
            lut_net = substitute(
                base, VQConfig(v=v, c=c, metric=metric), data.x_train, seed=seed + 300
            )
            return quick_accuracy_probe(lut_net, data, budget, seed=seed + 400)

    result = dse.search(space, shape, constraints, tables, probe=probe)
    ranked_payload = [
        {
            "rank": i,
            "point": {
                "v": r.point.v, "c": r.point.c, "metric": r.point.metric.value,
                "n_ccu": r.point.n_ccu, "n_imm": r.point.n_imm,
                "lut_banks": r.point.lut_banks, "t_n": r.point.t_n,
                "beta": None if math.isinf(r.point.beta) else r.point.beta,
            },
            "omega": {"load": r.omega.load, "sim": r.omega.sim, "lut": r.omega.lut,
                      "cycles": r.omega.cycles, "binding": r.omega.binding},
            "area": r.area,
            "power": r.power,
            "tau": r.tau_total,
            "phi": r.phi_total,
        }
        for i, r in enumerate(result.ranked)
    ]
    _write_json(
        os.path.join(out, "ranked.json"),
        {
            "provenance": prov,
            "probe_note": probe_note,
            "feasible": result.feasible,
            "infeasible_step": result.infeasible_step,
            "pruned": result.pruned,
            "ranked": ranked_payload,
        },
    )
    for name, points in result.steps.items():
        rows = [
            [row["v"], row["c"], row["count"], f"{row['best_omega']:.6g}"]
            for row in dse.heatmap_rows(points, shape)
        ]
        _write_csv(
            os.path.join(out, f"step_{name}.csv"),
            ["v", "c", "count", "best_omega"], rows, prov,
        )
    if verbose:
        print(f"dse: {len(result.ranked)} ranked designs, feasible={result.feasible}")
    if not result.feasible:
        return 3
    return 0


_COMMANDS = {
    "convert": cmd_convert,
    "amm": cmd_amm,
    "simulate": cmd_simulate,
    "dataflow": cmd_dataflow,
    "dse": cmd_dse,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lutamm", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    try:
        cfg, digest = _load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, digest, seed, args.out, args.verbose)
    except (InvalidInputError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: missing config key {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
