"""Run the five-stage demo pipeline: gen-data, train, attack, evaluate, report.

    python3 scripts/run_demo.py --out runs/demo [--fidelity F] [--seed S]
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from segrobust.cli import main as cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs" / "demo"


def run_pipeline(out: Path, configs: Path = CONFIGS, extra: list[str] = ()) -> int:
    out = Path(out)
    stages = [
        ["gen-data", str(configs / "gen-data.json"), "--out", str(out / "data")],
        ["train", str(configs / "train.json"), "--dataset", str(out / "data" / "train"),
         "--out", str(out / "model.sgmd")],
        ["attack", str(configs / "attack.json"), "--model", str(out / "model.sgmd"),
         "--dataset", str(out / "data" / "test"), "--out", str(out / "outcomes"), *extra],
        ["evaluate", str(configs / "evaluate.json"), "--outcomes", str(out / "outcomes"),
         "--out", str(out / "report")],
        ["report", str(configs / "report.json"), "--outcomes", str(out / "outcomes"),
         "--out", str(out / "plots")],
    ]
    for argv in stages:
        code = cli(argv)
        if code != 0:
            print(f"stage {argv[0]} failed with exit code {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--fidelity", type=float)
    args = ap.parse_args()
    extra = [] if args.fidelity is None else ["--fidelity", str(args.fidelity)]
    sys.exit(run_pipeline(Path(args.out), extra=extra))
