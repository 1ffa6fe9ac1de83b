"""Robust accuracy of models trained with different adversarial fractions.

    python3 scripts/at_fraction.py [--fractions 0 0.5 1] [--epochs 20] [--fidelity 1.0] [--out FILE.json]
"""
from __future__ import annotations

import argparse
import json

from segrobust.experiments import FractionExperiment, run_fraction_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.0, 1.0])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--fidelity", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = FractionExperiment(fractions=tuple(args.fractions), epochs=args.epochs,
                             fidelity=args.fidelity, seed=args.seed)
    rows = []
    for run in run_fraction_experiment(cfg):
        s = run.report.summary
        row = {"fraction": run.fraction,
               "clean": s["all"]["clean"], "robust": s["all"]["robust"],
               "robust_nobg": s["nobg"]["robust"],
               "train_seconds": round(run.train_seconds, 1), "eval_seconds": round(run.eval_seconds, 1)}
        rows.append(row)
        print(f"fraction {run.fraction:.2f}: clean acc {s['all']['clean']['accuracy']:.4f}, "
              f"robust acc {s['all']['robust']['accuracy']:.4f}, "
              f"robust NmIoU {s['all']['robust']['nmiou']:.4f} "
              f"(train {run.train_seconds:.0f}s, eval {run.eval_seconds:.0f}s)", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
