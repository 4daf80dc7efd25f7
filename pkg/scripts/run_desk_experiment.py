#!/usr/bin/env python3
"""Run the bundled desk-scale experiment and print the headline numbers.

Trains the 16-network zoo (corruption fractions x seeds plus dropout
variants), sweeps cumulative unit ablation, fits the linear gap model,
runs the 20-repeat split protocol, and fits the margin baseline on the
same zoo. Takes roughly 15-20 minutes on two CPU cores.

Usage:
    python3 scripts/run_desk_experiment.py --out runs/desk [--seed 0] [--workers 2]

The same experiment is available through the CLI:
    python3 scripts/run_desk_experiment.py --emit-config desk.json
    ablg run --config desk.json --out runs/desk
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from ablg.gap_model import pearson
from ablg.harness import desk_config, run_experiment


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/desk")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--emit-config", default=None, metavar="PATH",
                        help="write the experiment config JSON and exit")
    args = parser.parse_args(argv)

    config = desk_config(seed=args.seed)
    if args.emit_config:
        Path(args.emit_config).write_text(
            json.dumps(asdict(config), sort_keys=True, indent=2) + "\n")
        print(f"wrote {args.emit_config}")
        return 0

    result = run_experiment(config, args.out, workers=args.workers)
    if not result.ok:
        print(f"failed in stage {result.failure['stage']}: {result.failure['error']}",
              file=sys.stderr)
        return 1

    report = result.report
    scatter = report["scatter"]
    gaps = [row["gap"] for row in scatter]
    zetas = [row["zeta"] for row in scatter]
    kappas = [row["kappa"] for row in scatter]
    print(f"\nzoo: {len(scatter)} networks, gap spread "
          f"{max(gaps) - min(gaps):.3f} ({min(gaps):.3f} .. {max(gaps):.3f})")
    print(f"Pearson(zeta, gap) = {pearson(zetas, gaps):+.4f}")
    print(f"Pearson(kappa, gap) = {pearson(kappas, gaps):+.4f}")
    model = report["model"]
    print(f"linear model: gap ~ {model['a']:.3f}*zeta + {model['b']:.3f}*kappa "
          f"+ {model['c']:.3f}  (train Pearson {model['diagnostics']['pearson_train']:.4f})")
    ev = report["evaluation"]
    print(f"protocol: median test SSR {ev['test_ssr']['median']:.5f}, "
          f"median per-network sq residual {ev['median_sq_residual']:.5f} "
          f"vs constant-baseline {ev['baseline_median_sq_residual']:.5f}")
    mm = report.get("margin_model")
    if mm:
        print(f"margin baseline: train Pearson {mm['pearson_train']:.4f}, "
              f"train SSR {mm['ssr_train']:.4f}")
    print(f"\nartifacts in {result.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
