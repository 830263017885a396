"""Command line interface: simulate scenes, estimate, convergence, normalize.

All randomness is seed-controlled and timing goes to stderr, so two runs with
identical flags and inputs produce byte-identical stdout and output files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .coarse import CoarseConfig, estimate_coarse
from .dense import DenseConfig, estimate_dense
from .errors import PerspflowError
from .flow import FlowSequence, GridSpec, read_flowlog, slice_fraction, write_flow_stream
from .scene import load_scene_script, simulate

DEFAULT_FRACTIONS = tuple((k + 1) / 8 for k in range(8))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _print_report(report: dict) -> None:
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def _dense_config(args: argparse.Namespace) -> DenseConfig:
    return DenseConfig(
        cell_size=args.cell_size,
        min_samples=args.min_samples,
        velocity_epsilon=args.velocity_epsilon,
        trim=args.trim,
    )


def _coarse_config(args: argparse.Namespace) -> CoarseConfig:
    return CoarseConfig(
        solver=args.solver,
        rho_denominator=args.rho_denominator,
        min_block_count=args.min_block_count,
    )


def _input_block(path: str, seq: FlowSequence) -> dict:
    return {
        "path": path,
        "sha256": _sha256(Path(path)),
        "width": seq.width,
        "height": seq.height,
        "frame_rate": seq.frame_rate,
        "n_frames": seq.n_frames,
        "n_vectors": seq.n_vectors,
    }


def _run_dense(seq: FlowSequence, config: DenseConfig) -> tuple[float, dict]:
    est = estimate_dense(seq, config)
    return est.zeta, {
        "zeta": est.zeta,
        "valid_cells": est.consensus.n_valid,
        "trimmed_cells": est.consensus.n_trimmed,
        "used_cells": est.consensus.n_used,
    }


def _run_coarse(seq: FlowSequence, grid: GridSpec, config: CoarseConfig) -> tuple[float, dict, object]:
    est = estimate_coarse(seq, grid, config)
    o = est.estimate
    return o.zeta, {
        "zeta": o.zeta,
        "omega": o.omega,
        "delta_omega": o.delta_omega,
        "residual": o.residual,
        "constraints": o.n_constraints,
        "solver": o.solver,
        "iterations": o.iterations,
        "block_height": o.block_height,
    }, est


def cmd_simulate(args: argparse.Namespace) -> int:
    script = load_scene_script(args.script)
    if args.threshold is not None:
        script = type(script)(
            camera=script.camera,
            duration=script.duration,
            frame_rate=script.frame_rate,
            objects=script.objects,
            mode=script.mode,
            noise_std=script.noise_std,
            threshold=args.threshold,
            outlier=script.outlier,
        )
    result = simulate(script, args.seed)
    data = write_flow_stream(result.sequence)
    with open(args.out, "wb") as fh:
        fh.write(data)
    meta = {
        "script": str(args.script),
        "seed": args.seed,
        "mode": script.mode,
        "oracle_zeta_center": result.zeta_center,
        "width": result.sequence.width,
        "height": result.sequence.height,
        "frame_rate": result.sequence.frame_rate,
        "n_frames": result.sequence.n_frames,
        "n_vectors": result.sequence.n_vectors,
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    _write_text(str(args.out) + ".meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _print_report(meta)
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    seq = read_flowlog(args.input)
    grid = GridSpec.parse(args.grid)
    report: dict = {
        "command": "estimate",
        "method": args.method,
        "input": _input_block(args.input, seq),
        "config": {
            "cell_size": args.cell_size,
            "min_samples": args.min_samples,
            "velocity_epsilon": args.velocity_epsilon,
            "trim": args.trim,
            "grid": f"{grid.rows}x{grid.cols}",
            "min_block_count": args.min_block_count,
            "rho_denominator": args.rho_denominator,
            "solver": args.solver,
        },
    }
    zeta_dense = zeta_coarse = None
    if args.method in ("dense", "both"):
        est = estimate_dense(seq, _dense_config(args))
        zeta_dense = est.zeta
        report["dense"] = {
            "zeta": est.zeta,
            "valid_cells": est.consensus.n_valid,
            "trimmed_cells": est.consensus.n_trimmed,
            "used_cells": est.consensus.n_used,
        }
        if args.out_field:
            _write_text(args.out_field, est.field.to_csv())
    if args.method in ("coarse", "both"):
        zeta_coarse, block, est_c = _run_coarse(seq, grid, _coarse_config(args))
        report["coarse"] = block
        if args.out_blocks:
            _write_text(args.out_blocks, est_c.finalized.to_csv())
    if args.method == "both" and zeta_dense is not None and zeta_coarse is not None:
        agreement = {"abs_difference": abs(zeta_dense - zeta_coarse)}
        if zeta_dense != 0:
            agreement["relative_difference"] = abs(zeta_dense - zeta_coarse) / abs(zeta_dense)
        report["agreement"] = agreement
    _print_report(report)
    return 0


def cmd_convergence(args: argparse.Namespace) -> int:
    seq = read_flowlog(args.input)
    grid = GridSpec.parse(args.grid)
    fractions = DEFAULT_FRACTIONS if args.fractions is None else tuple(
        float(tok) for tok in args.fractions.split(",")
    )
    reference = args.reference
    if reference is None and args.meta is not None:
        with open(args.meta, "r", encoding="ascii") as fh:
            reference = float(json.load(fh)["oracle_zeta_center"])

    lines = ["fraction,zeta,relative_error"]
    rows = []
    for fraction in fractions:
        prefix = slice_fraction(seq, fraction)
        if args.method == "dense":
            zeta, _ = _run_dense(prefix, _dense_config(args))
        else:
            zeta, _, _ = _run_coarse(prefix, grid, _coarse_config(args))
        if reference is not None and reference != 0:
            err = abs(zeta - reference) / abs(reference)
            lines.append(f"{fraction:.6g},{zeta:.6g},{err:.6g}")
        else:
            err = None
            lines.append(f"{fraction:.6g},{zeta:.6g},")
        rows.append({"fraction": fraction, "zeta": zeta, "relative_error": err})

    csv_text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, csv_text)
    _print_report(
        {
            "command": "convergence",
            "method": args.method,
            "input": _input_block(args.input, seq),
            "reference": reference,
            "rows": rows,
            "out": args.out,
        }
    )
    return 0


def cmd_normalize(args: argparse.Namespace) -> int:
    seq = read_flowlog(args.input)
    if args.zeta is not None:
        zeta = args.zeta
        source = "flag"
    elif args.method == "coarse":
        zeta, _, _ = _run_coarse(seq, GridSpec.parse(args.grid), _coarse_config(args))
        source = "coarse"
    else:
        zeta, _ = _run_dense(seq, _dense_config(args))
        source = "dense"
    ref_row = args.ref_row if args.ref_row is not None else seq.height - 1
    if not 0 <= ref_row < seq.height:
        raise PerspflowError(f"reference row {ref_row} outside image of height {seq.height}")

    # The per-pixel relative scale rate compounds exponentially with row
    # distance, so thresholds tuned at the reference row map across the image
    # through exp(zeta * (v - v_ref)).
    rows_v = np.arange(seq.height)
    factors = np.exp(zeta * (rows_v - ref_row))
    lines = ["row,threshold_factor"]
    lines.extend(f"{v},{factors[v]:.6g}" for v in rows_v)
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, csv_text)
    _print_report(
        {
            "command": "normalize",
            "input": _input_block(args.input, seq),
            "zeta": zeta,
            "zeta_source": source,
            "reference_row": int(ref_row),
            "out": args.out,
        }
    )
    return 0


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", default="10x10", help="block grid as ROWSxCOLS (default 10x10)")
    p.add_argument("--cell-size", type=int, default=4, help="dense cell size in pixels (default 4)")
    p.add_argument("--trim", type=float, default=0.15, help="per-tail trim fraction (default 0.15)")
    p.add_argument("--min-samples", type=int, default=10, help="min samples per dense cell (default 10)")
    p.add_argument(
        "--velocity-epsilon", type=float, default=0.2,
        help="min |mean vertical velocity| per cell in px/frame (default 0.2)",
    )
    p.add_argument(
        "--min-block-count", type=int, default=5,
        help="blocks with fewer vectors contribute no constraint (default 5)",
    )
    p.add_argument(
        "--rho-denominator", choices=("transitions", "all"), default="transitions",
        help="normalize transition proportions over crossings only, or over all ending vectors",
    )
    p.add_argument("--solver", choices=("closed_form", "iterative"), default="closed_form")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perspflow",
        description="Estimate the perspective scale gradient of a static scene from sparse flow vectors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scene script and write a FLOWLOG stream")
    p_sim.add_argument("--script", required=True, help="scene script path")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True, help="output FLOWLOG path")
    p_sim.add_argument("--threshold", type=float, default=None, help="override the script's sparsification threshold")
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate the scale gradient of a FLOWLOG stream")
    p_est.add_argument("input", help="FLOWLOG path")
    p_est.add_argument("--method", choices=("dense", "coarse", "both"), default="dense")
    _add_estimator_flags(p_est)
    p_est.add_argument("--out-field", default=None, help="write the dense per-cell field CSV here")
    p_est.add_argument("--out-blocks", default=None, help="write the block statistics CSV here")
    p_est.set_defaults(func=cmd_estimate)

    p_conv = sub.add_parser("convergence", help="estimate on growing temporal prefixes")
    p_conv.add_argument("input", help="FLOWLOG path")
    p_conv.add_argument("--method", choices=("dense", "coarse"), default="dense")
    _add_estimator_flags(p_conv)
    p_conv.add_argument("--fractions", default=None, help="comma-separated fractions (default 0.125..1.0)")
    p_conv.add_argument("--reference", type=float, default=None, help="reference zeta for relative error")
    p_conv.add_argument("--meta", default=None, help="simulate meta JSON carrying oracle_zeta_center")
    p_conv.add_argument("--out", default=None, help="output CSV path")
    p_conv.set_defaults(func=cmd_convergence)

    p_norm = sub.add_parser("normalize", help="per-row threshold factors implied by a scale gradient")
    p_norm.add_argument("input", help="FLOWLOG path (provides image height; estimator input unless --zeta)")
    p_norm.add_argument("--method", choices=("dense", "coarse"), default="dense")
    _add_estimator_flags(p_norm)
    p_norm.add_argument("--zeta", type=float, default=None, help="use this gradient instead of estimating")
    p_norm.add_argument("--ref-row", type=int, default=None, help="reference row (default: bottom row)")
    p_norm.add_argument("--out", default=None, help="output CSV path")
    p_norm.set_defaults(func=cmd_normalize)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.monotonic()
    try:
        code = args.func(args)
    except (PerspflowError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    sys.stderr.write(f"# duration_s {time.monotonic() - started:.3f}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
