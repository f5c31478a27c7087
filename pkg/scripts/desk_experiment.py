#!/usr/bin/env python3
"""Train and evaluate the default model at desk scale and print the comparison.

    python3 scripts/desk_experiment.py --root runs/desk --seed 7

``--train-args`` and ``--eval-args`` take a quoted string of extra flags,
e.g. ``--train-args "--epochs 50"``.
"""

import argparse
import shlex
import sys
from pathlib import Path

from ndif.experiment import run_desk_experiment


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--root", type=Path, default=Path("runs/desk"), help="working directory for data, model and results")
    p.add_argument("--seed", type=int, default=7, help="seed for every stage")
    p.add_argument("--cutoff-days", type=float, default=2.0, help="forecast cutoff in days to TCA")
    p.add_argument("--train-args", default="", help="extra flags for `ndif train`, as one quoted string")
    p.add_argument("--eval-args", default="", help="extra flags for `ndif eval`, as one quoted string")
    args = p.parse_args(argv)
    res = run_desk_experiment(
        args.root, args.seed, args.cutoff_days, train_args=shlex.split(args.train_args), eval_args=shlex.split(args.eval_args)
    )

    print(f"train {res.train_seconds / 60:.1f} min, eval {res.eval_seconds / 60:.1f} min")
    print(f"{'model':<10} {'MAE [m]':>10} {'RMSE [m]':>10} {'n':>6} {'coverage':>9}")
    for name, m in res.metrics.items():
        cov = res.diagnostics[name]["band_coverage"]
        print(f"{name:<10} {m['mae_m']:>10.1f} {m['rmse_m']:>10.1f} {m['n']:>6} {'-' if cov is None else f'{cov:.3f}':>9}")
    base, diff = res.metrics["baseline"], res.metrics["diffusion"]
    print(f"MAE ratio diffusion/baseline: {diff['mae_m'] / base['mae_m']:.3f}")
    print(f"summary written to {args.root / 'summary.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
