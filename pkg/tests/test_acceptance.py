"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION <n> PASS|FAIL: ...`` line. Criteria 2,
4, 5 and 7 share one full-fidelity run: undefended and fully adversarially
trained TinyConvNets on the default synthetic split, each attacked by all ten
attacks.
"""
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import threshold_instance
from oracles import oracle_cmiou, oracle_nmiou
from segrobust.attacks import ATTACK_NAMES, BatteryConfig
from segrobust.attacks.minpert import (MinPertConfig, MinPertOutcome, almaprox_attack,
                                       clip_to_budget, dag_attack, pdpgd_attack)
from segrobust.data import SynthSpec, gen_synthetic_dataset
from segrobust.experiments import FractionExperiment, aggregation_gain, run_fraction_experiment
from segrobust.harness import evaluate_model, minpert_cdf
from segrobust.losses import LOSS_KINDS
from segrobust.metrics import MetricConfig, cmiou, confusion, nmiou
from segrobust.models import ToyModelSpec, build_model, grad_check
from segrobust.reports import MINPERT_ATTACKS
from segrobust.tensor_core import linf_norm

ROOT = Path(__file__).resolve().parent.parent
EPS = 8 / 255


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def full_run():
    start = time.perf_counter()
    runs = run_fraction_experiment(FractionExperiment(fractions=(0.0, 1.0), keep_perturbations=True))
    _, test = gen_synthetic_dataset(SynthSpec())
    return {"runs": {r.fraction: r for r in runs}, "test": test,
            "seconds": time.perf_counter() - start}


def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    worst = 0.0
    for variant in ("PatchLinear", "TinyConvNet"):
        for kind in LOSS_KINDS:
            for seed in range(5):
                rng = np.random.default_rng(seed)
                model = build_model(ToyModelSpec(variant=variant, seed=seed))
                x = rng.uniform(0, 1, (8, 8, 3))
                y = rng.integers(0, 3, (8, 8))
                kw = {"lam": 0.75} if kind == "sea-bce" else {}
                worst = max(worst, grad_check(model, kind, x, y, seed=seed, **kw))
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-4 and elapsed < 30,
            f"max relative error {worst:.2e} (< 1e-4) over 2 models x 6 losses x 5 seeds in {elapsed:.1f}s (< 30s)")


def test_criterion_2_feasibility(full_run, verdict):
    worst_norm, box_ok, count = 0.0, True, 0
    for run in full_run["runs"].values():
        for image_id, x, _ in full_run["test"]:
            for name, delta in run.report.perturbations[image_id].items():
                worst_norm = max(worst_norm, linf_norm(delta))
                box_ok &= bool(np.all(x + delta >= 0) and np.all(x + delta <= 1))
                count += 1
    model = full_run["runs"][0.0].model
    zero = evaluate_model(model, full_run["test"], list(ATTACK_NAMES),
                          BatteryConfig(eps=0.0, fidelity=0.05, minpert_background_id=0))
    zero_ok = all(zero.summary[v]["robust"] == zero.summary[v]["clean"] for v in ("all", "nobg"))
    ok = worst_norm <= EPS + 1e-9 and box_ok and zero_ok and count == 2 * 16 * 10
    verdict(2, ok, f"{count} perturbations, max norm {worst_norm:.6f} <= {EPS + 1e-9:.6f}, "
                   f"box {'ok' if box_ok else 'violated'}, zero budget robust == clean: {zero_ok}")


def test_criterion_3_metric_oracle(verdict):
    rng = np.random.default_rng(2024)
    cfg = MetricConfig(3)
    mismatches = 0
    pairs = [(rng.integers(0, 3, (3, 3)), rng.integers(0, 3, (3, 3))) for _ in range(1000)]
    for p, t in pairs:
        c = [confusion(p, t, cfg)]
        mismatches += cmiou(c) != oracle_cmiou([(p, t)], 3)
        mismatches += nmiou(c) != oracle_nmiou([(p, t)], 3)
    for k in range(0, 1000, 10):
        group = pairs[k:k + 10]
        counts = [confusion(p, t, cfg) for p, t in group]
        mismatches += cmiou(counts) != oracle_cmiou(group, 3)
        mismatches += nmiou(counts) != oracle_nmiou(group, 3)
    truth = np.array([[0, 0], [1, 1]])
    fixture = [confusion(truth, truth, MetricConfig(2)), confusion(1 - truth, truth, MetricConfig(2))]
    c, n = cmiou(fixture), nmiou(fixture)
    ok = mismatches == 0 and c == 1 / 3 and n == 0.5
    verdict(3, ok, f"{mismatches} mismatches over 1000 pairs and 100 groups; fixture CmIoU={c!r} NmIoU={n!r}")


def test_criterion_4_aggregation(full_run, verdict):
    violations = []
    for frac, run in full_run["runs"].items():
        for variant in ("all", "nobg"):
            for key, g in aggregation_gain(run.report, variant).items():
                if key in ("accuracy", "nmiou") and g["gain"] < 0:
                    violations.append(f"{frac}/{variant}/{key}")
    gains = {v: aggregation_gain(full_run["runs"][0.0].report, v) for v in ("all", "nobg")}
    strict = gains["nobg"]["nmiou"]["gain"]
    ok = not violations and strict >= 0.01
    detail = (f"dominance violations: {violations or 'none'}; undefended model NmIoU gain over best "
              f"single attack: {strict:.4f} without background (>= 0.01), "
              f"{gains['all']['nmiou']['gain']:.4f} with background; "
              f"accuracy gain {gains['all']['accuracy']['gain']:.4f}")
    verdict(4, ok, detail)


def test_criterion_5_at_fraction(full_run, verdict):
    runs = full_run["runs"]
    r0 = runs[0.0].report.summary["all"]["robust"]["accuracy"]
    r1 = runs[1.0].report.summary["all"]["robust"]["accuracy"]
    total = sum(r.train_seconds + r.eval_seconds for r in runs.values())
    ok = r1 - r0 >= 0.10 and total <= 600
    verdict(5, ok, f"robust accuracy fraction 1.0: {r1:.4f}, fraction 0.0: {r0:.4f}, "
                   f"gap {100 * (r1 - r0):.1f} pp (>= 10); train+evaluate {total:.0f}s (<= 600s)")


def test_criterion_6_size_bias(verdict):
    sys.path.insert(0, str(ROOT / "scripts"))
    from make_size_bias_golden import size_bias_pairs

    golden = json.loads((ROOT / "tests" / "golden" / "size_bias.json").read_text())["all"]
    pairs = size_bias_pairs()
    cfg = MetricConfig(3)
    deleted = [confusion(p, t, cfg) for p, t in pairs]
    perfect = [confusion(t, t, cfg) for _, t in pairs]
    c_drop = cmiou(perfect) - cmiou(deleted)
    n_drop = nmiou(perfect) - nmiou(deleted)
    matches = (abs(cmiou(deleted) - golden["small_deleted"]["cmiou"]) <= 1e-12
               and abs(nmiou(deleted) - golden["small_deleted"]["nmiou"]) <= 1e-12
               and cmiou(perfect) == golden["perfect"]["cmiou"] == 1.0
               and nmiou(perfect) == golden["perfect"]["nmiou"] == 1.0)
    verdict(6, matches and n_drop > c_drop,
            f"NmIoU drop {n_drop:.4f} > CmIoU drop {c_drop:.4f}; golden values matched: {matches}")


def test_criterion_7_minpert(full_run, verdict):
    errors = {}
    for label, attack, cfg in (("dag-0.001", dag_attack, MinPertConfig(dag_step=0.001)),
                               ("dag-0.003", dag_attack, MinPertConfig(dag_step=0.003)),
                               ("almaprox", almaprox_attack, MinPertConfig()),
                               ("pdpgd", pdpgd_attack, MinPertConfig())):
        model, x, y, t = threshold_instance()
        out = attack(model, x, y, cfg)
        errors[label] = abs(out.raw_norm - t) / t if out.success else float("inf")
    rng = np.random.default_rng(0)
    clip_worst = 0.0
    for _ in range(500):
        eps = rng.uniform(0, 0.2)
        d = rng.normal(size=(4, 4, 3)) * rng.uniform(1e-3, 1)
        mode = "rescale" if rng.uniform() < 0.5 else "clamp"
        clip_worst = max(clip_worst, linf_norm(clip_to_budget(MinPertOutcome(d, 1.0, linf_norm(d), 1, True),
                                                             eps, mode=mode)) - eps)
    cdf_ok = True
    for run in full_run["runs"].values():
        for name in MINPERT_ATTACKS:
            records = run.report.minpert_outcomes(name)
            for rho in (0.9, 0.99):
                pts = minpert_cdf(records, rho)
                ys = [f for _, f in pts]
                reached = sum(r.norm_at_ratio.get(rho) is not None for r in records) / len(records)
                cdf_ok &= ys == sorted(ys) and abs((ys[-1] if ys else 0.0) - reached) < 1e-12
    ok = max(errors.values()) <= 0.10 and clip_worst <= 1e-12 and cdf_ok
    verdict(7, ok, "relative error to closed form: "
                   + ", ".join(f"{k} {v:.4f}" for k, v in errors.items())
                   + f" (<= 0.10); clip excess {clip_worst:.1e}; CDF monotone with plateau: {cdf_ok}")


def test_criterion_8_determinism(tmp_path, verdict):
    sys.path.insert(0, str(ROOT / "scripts"))
    from run_demo import run_pipeline

    assert run_pipeline(tmp_path / "a") == 0
    assert run_pipeline(tmp_path / "b") == 0
    differing, compared = [], 0
    for sub in ("report", "plots"):
        names = sorted(p.name for p in (tmp_path / "a" / sub).iterdir())
        if names != sorted(p.name for p in (tmp_path / "b" / sub).iterdir()):
            differing.append(f"{sub}/ file list")
        for name in names:
            compared += 1
            if (tmp_path / "a" / sub / name).read_bytes() != (tmp_path / "b" / sub / name).read_bytes():
                differing.append(f"{sub}/{name}")
    verdict(8, not differing, f"{compared} report files compared byte for byte, differing: {differing or 'none'}")
