"""Desk-scale experiments shared by the scripts and the acceptance tests."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from .attacks import ATTACK_NAMES, BatteryConfig
from .data import SynthSpec, gen_synthetic_dataset
from .harness import EvalReport, TrainConfig, adversarial_train, evaluate_model
from .models import ToyModelSpec

METRICS = ("accuracy", "cmiou", "nmiou")


@dataclass
class FractionExperiment:
    """Train one model per adversarial fraction and evaluate each with the full battery."""
    fractions: tuple = (0.0, 1.0)
    data: SynthSpec = field(default_factory=SynthSpec)
    model: ToyModelSpec = field(default_factory=ToyModelSpec)
    epochs: int = 20
    fidelity: float = 1.0
    seed: int = 0
    attacks: tuple = ATTACK_NAMES
    keep_perturbations: bool = False


@dataclass
class FractionRun:
    fraction: float
    report: EvalReport
    train_seconds: float
    eval_seconds: float
    model: object = None


def run_fraction_experiment(cfg: FractionExperiment) -> list[FractionRun]:
    train, test = gen_synthetic_dataset(cfg.data)
    battery = BatteryConfig(fidelity=cfg.fidelity, seed=cfg.seed,
                            minpert_background_id=test.background_id)
    runs = []
    for frac in cfg.fractions:
        t0 = time.perf_counter()
        model = adversarial_train(cfg.model, train,
                                  TrainConfig(epochs=cfg.epochs, adversarial_fraction=frac, seed=cfg.seed))
        t1 = time.perf_counter()
        report = evaluate_model(model, test, list(cfg.attacks), battery,
                                keep_perturbations=cfg.keep_perturbations)
        runs.append(FractionRun(frac, report, t1 - t0, time.perf_counter() - t1, model))
    return runs


def aggregation_gain(report: EvalReport, variant: str = "all") -> dict:
    """Per metric: best standalone attack value, aggregated value and their difference."""
    s = report.summary[variant]
    out = {}
    for key in METRICS:
        standalone = {n: v[key] for n, v in s["per_attack"].items() if v[key] is not None}
        best = min(standalone.values())
        agg = s["robust"][key]
        out[key] = {"best_single": best, "best_single_attack": min(standalone, key=standalone.get),
                    "aggregated": agg, "gain": best - agg}
    return out
