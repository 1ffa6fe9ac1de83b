"""Freeze the size-bias fixture values computed by the brute-force metric oracle.

    python3 scripts/make_size_bias_golden.py   -> tests/golden/size_bias.json
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))
from oracles import oracle_cmiou, oracle_nmiou  # noqa: E402

from segrobust.data import SynthSpec, gen_synthetic_dataset  # noqa: E402


def size_bias_pairs():
    """(prediction, truth) pairs where every small object is predicted as background.

    Truth masks come from the default test split. In every odd image the two
    object labels are swapped, so each object class occurs both as a large
    disk and as small disks across the set. Predictions keep the large disk
    intact and relabel every small-disk pixel to background.
    """
    _, test = gen_synthetic_dataset(SynthSpec())
    pairs = []
    for k, (_, _, y) in enumerate(test):
        small = y == 2
        truth = np.where(y == 0, 0, 3 - y) if k % 2 else y.copy()
        pairs.append((np.where(small, 0, truth), truth))
    return pairs


def main():
    pairs = size_bias_pairs()
    perfect = [(t, t) for _, t in pairs]
    values = {"n_images": len(pairs)}
    for variant, excluded in (("all", ()), ("nobg", (0,))):
        values[variant] = {
            name: {"cmiou": oracle_cmiou(ps, 3, excluded), "nmiou": oracle_nmiou(ps, 3, excluded)}
            for name, ps in (("perfect", perfect), ("small_deleted", pairs))}
    out = ROOT / "tests" / "golden" / "size_bias.json"
    out.write_text(json.dumps(values, indent=2) + "\n")
    print(json.dumps(values, indent=2))


if __name__ == "__main__":
    main()
