"""Command-line entry point: ``hgfpf {gain-compare,convergence,benchmark}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config, parse_seeds
from .experiments import FULL_OVERRIDES, ExperimentSpec, MetricsReport, run_experiment

COMMAND_KINDS = {
    "gain-compare": ("gain_compare",),
    "convergence": ("convergence_M", "convergence_Np"),
    "benchmark": ("benchmark",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgfpf",
        description="Hermite-Galerkin feedback particle filter experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gain-compare": "exact vs Hermite-Galerkin gains on a bimodal density",
        "convergence": "error vs truncation order M and vs particle count Np",
        "benchmark": "double-well filtering with three gain methods",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="INI file ([experiment] and [parameters])")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--seeds", help="seed list such as 0-19 or 0,3,5")
        p.add_argument("--full", action="store_true",
                       help="long benchmark: T=400 and 100 runs (seeds 0-99 unless --seeds)")
        p.add_argument("--workers", type=int, help="processes for the Monte Carlo loop")
    return parser


def _specs(args) -> list[ExperimentSpec]:
    kinds = COMMAND_KINDS[args.command]
    if args.config is not None:
        base = load_config(args.config)
        if base.kind not in kinds:
            raise ValueError(f"config kind {base.kind!r} does not belong to '{args.command}'")
        specs = [base]
    else:
        specs = [ExperimentSpec(k, output_dir=Path("out") / args.command) for k in kinds]
    out = []
    for spec in specs:
        params, seeds = dict(spec.parameters), list(spec.seeds)
        if args.full and spec.kind in FULL_OVERRIDES:
            over, full_seeds = FULL_OVERRIDES[spec.kind]
            params.update(over)
            seeds = full_seeds
        if args.seeds:
            seeds = parse_seeds(args.seeds)
        out.append(ExperimentSpec(spec.kind, params, seeds,
                                  args.out if args.out is not None else spec.output_dir,
                                  args.workers if args.workers is not None else spec.workers))
    return out


def _describe(report: MetricsReport) -> list[str]:
    lines = [f"[{report.kind}]"]
    for m, v in report.armse.items():
        lines.append(f"  {m:18s} ARMSE {v:.4f}   CPU {report.cpu_seconds[m]:.2f} s")
    for name, rows in report.error_tables.items():
        for row in rows:
            lines.append("  " + "  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                                          for k, v in row.items()))
    if report.slope is not None:
        lines.append(f"  fitted log-log slope {report.slope:.4f}")
    return lines


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        for spec in _specs(args):
            report = run_experiment(spec)
            print("\n".join(_describe(report)))
            print(f"  wrote {spec.output_dir}")
    except Exception as exc:  # any module error: message and nonzero exit
        print(f"hgfpf: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
