"""Gain of the per-image worst-case aggregation over the best single attack.

    python3 scripts/aggregation_gain.py [--hidden 8 16] [--epochs 20] [--fidelity 1.0]
"""
from __future__ import annotations

import argparse

from segrobust.experiments import (METRICS, FractionExperiment, aggregation_gain,
                                   run_fraction_experiment)
from segrobust.models import ToyModelSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--hidden", type=int, nargs="+", default=[8])
    ap.add_argument("--nonlinearity", choices=["relu", "tanh"], default="relu")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--fidelity", type=float, default=1.0)
    args = ap.parse_args()
    for hidden in args.hidden:
        cfg = FractionExperiment(fractions=(0.0,), epochs=args.epochs, fidelity=args.fidelity,
                                 model=ToyModelSpec(hidden=hidden, nonlinearity=args.nonlinearity))
        (run,) = run_fraction_experiment(cfg)
        for variant in ("all", "nobg"):
            gains = aggregation_gain(run.report, variant)
            cells = ", ".join(f"{k} {gains[k]['aggregated']:.4f} (gain {gains[k]['gain']:+.4f} "
                              f"vs {gains[k]['best_single_attack']})" for k in METRICS)
            print(f"hidden {hidden} {variant}: {cells}", flush=True)


if __name__ == "__main__":
    main()
