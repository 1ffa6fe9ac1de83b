"""Serialization of per-image outcomes and the report files.

Report files written by ``write_report``:

* ``summary.json``: dataset-level clean/robust metrics, with and without background
* ``per_image.csv``: image id, clean/robust accuracy and mIoU, best attack indices
* ``counts.csv``: per-image, per-class clean TP/FP/FN

``write_plot_data`` adds mIoU histograms, best-attack histograms and min-pert CDFs.
Metric values are rounded to 4 decimals in every file.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .attacks import ATTACK_INDEX, ATTACK_NAMES
from .harness import (VARIANTS, AttackRecord, EvalReport, ImageRecord, aggregate_attacks,
                      best_attack_distribution, image_mious, miou_histogram, minpert_cdf, summarize)
from .metrics import ConfusionCounts, image_accuracy, image_miou, write_counts_csv

MINPERT_ATTACKS = ("almaprox", "dag-0.001", "dag-0.003", "pdpgd")
CDF_RHOS = (0.9, 0.99)


def _r(v):
    return None if v is None else round(float(v), 4)


def _round_tree(obj):
    if isinstance(obj, float):
        return round(obj, 4)
    if isinstance(obj, dict):
        return {k: _round_tree(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_tree(v) for v in obj]
    return obj


# -- per-image records -----------------------------------------------------

def record_to_json(rec: ImageRecord) -> dict:
    attacks = {}
    for name, a in rec.attacks.items():
        attacks[name] = {
            "counts": {v: c.to_dict() for v, c in a.counts.items()},
            "runtime": a.runtime,
            "raw_norm": a.raw_norm,
            "achieved_error_ratio": a.achieved_error_ratio,
            "norm_at_ratio": None if a.norm_at_ratio is None
            else {str(k): v for k, v in a.norm_at_ratio.items()},
            "success": a.success,
            "failed": a.failed,
        }
    return {"image_id": rec.image_id,
            "clean": {v: c.to_dict() for v, c in rec.clean.items()},
            "attacks": attacks}


def record_from_json(d: dict) -> ImageRecord:
    rec = ImageRecord(d["image_id"], {v: ConfusionCounts.from_dict(c) for v, c in d["clean"].items()})
    for name, a in d["attacks"].items():
        nar = a.get("norm_at_ratio")
        rec.attacks[name] = AttackRecord(
            name, {v: ConfusionCounts.from_dict(c) for v, c in a["counts"].items()},
            a.get("runtime", 0.0), a.get("raw_norm"), a.get("achieved_error_ratio"),
            None if nar is None else {float(k): v for k, v in nar.items()},
            a.get("success"), a.get("failed"))
    return rec


def report_from_records(records: list, attack_names: list, classes: int) -> EvalReport:
    summary, selections = summarize(records, attack_names)
    return EvalReport(records, list(attack_names), classes, summary, selections)


# -- report files ----------------------------------------------------------

def write_report(report: EvalReport, out, timings: bool = False) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = dict(report.summary)
    summary["classes"] = report.classes
    paths = [out / "summary.json", out / "per_image.csv", out / "counts.csv", out / "selections.json"]
    paths[0].write_text(json.dumps(_round_tree(summary), indent=2, sort_keys=True) + "\n")

    sel = {f"{v}/{t}": names for (v, t), names in sorted(report.selections.items())}
    paths[3].write_text(json.dumps({"attack_names": report.attack_names,
                                    "image_ids": [im.image_id for im in report.images],
                                    "selections": sel}, indent=2, sort_keys=True) + "\n")

    if report.attack_names:
        acc_sel, acc_counts = aggregate_attacks(report.images, "accuracy", "all")
        miou_sel, miou_counts = aggregate_attacks(report.images, "miou", "all")
    else:
        acc_sel = miou_sel = [None] * len(report.images)
        acc_counts = miou_counts = [im.clean["all"] for im in report.images]
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "clean_accuracy", "robust_accuracy", "clean_miou", "robust_miou",
                     "best_attack_accuracy", "best_attack_miou"])
        for im, sa, ca, sm, cm in zip(report.images, acc_sel, acc_counts, miou_sel, miou_counts):
            w.writerow([im.image_id, _r(image_accuracy(im.clean["all"])), _r(image_accuracy(ca)),
                        _r(image_miou(im.clean["all"])), _r(image_miou(cm)),
                        "" if sa is None else ATTACK_INDEX[sa], "" if sm is None else ATTACK_INDEX[sm]])
    write_counts_csv(paths[2], [(im.image_id, im.clean["all"]) for im in report.images])

    if timings:
        per_attack = {n: sum(im.attacks[n].runtime for im in report.images) for n in report.attack_names}
        p = out / "timings.json"
        p.write_text(json.dumps(per_attack, indent=2, sort_keys=True) + "\n")
        paths.append(p)
    return paths


def load_report(path) -> EvalReport:
    """Rebuild an EvalReport from an outcomes directory (see ``cli attack``)."""
    path = Path(path)
    index = json.loads((path / "outcomes.json").read_text())
    records = [record_from_json(json.loads((path / f"{i}.json").read_text())) for i in index["image_ids"]]
    return report_from_records(records, index["attack_names"], index["classes"])


def write_plot_data(report: EvalReport, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    edges = [i / 20 for i in range(21)]
    for variant in VARIANTS:
        for which in ("clean", "robust"):
            counts = miou_histogram(image_mious(report, which, variant), bins=20)
            p = out / f"miou_hist_{which}_{variant}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bin_low", "bin_high", "count"])
                for k, c in enumerate(counts):
                    w.writerow([_r(edges[k]), _r(edges[k + 1]), int(c)])
            paths.append(p)
        for target in ("accuracy", "miou"):
            hist = best_attack_distribution(report, target, variant)
            p = out / f"best_attack_{target}_{variant}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["attack_index", "attack", "count"])
                for k, name in enumerate(ATTACK_NAMES):
                    w.writerow([k, name, int(hist[k])])
            paths.append(p)
    for name in MINPERT_ATTACKS:
        if name not in report.attack_names:
            continue
        records = [r for r in report.minpert_outcomes(name) if not r.failed]
        for rho in CDF_RHOS:
            p = out / f"cdf_{name}_{int(round(rho * 100))}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["norm", "fraction"])
                for norm, frac in minpert_cdf(records, rho):
                    w.writerow([f"{norm:.6f}", _r(frac)])
            paths.append(p)
    return paths
