"""Evaluation, attack aggregation, adversarial training and report data."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attacks import ATTACK_INDEX, ATTACK_NAMES, BatteryConfig, check_names, pgd_attack, run_attack
from .data import Dataset
from .losses import loss_ce
from .metrics import (ConfusionCounts, MetricConfig, UndefinedMetricError, cmiou, confusion,
                      image_accuracy, image_miou, nmiou, pixel_accuracy)
from .models import Segmenter, ToyModelSpec, build_model
from .tensor_core import ContractError

log = logging.getLogger(__name__)

VARIANTS = ("all", "nobg")  # all evaluated pixels / background ground truth dropped
TARGETS = ("accuracy", "miou")


@dataclass
class AttackRecord:
    name: str
    counts: dict  # variant -> ConfusionCounts
    runtime: float = 0.0
    raw_norm: float | None = None
    achieved_error_ratio: float | None = None
    norm_at_ratio: dict | None = None
    success: bool | None = None
    failed: str | None = None


@dataclass
class ImageRecord:
    image_id: str
    clean: dict  # variant -> ConfusionCounts
    attacks: dict = field(default_factory=dict)  # name -> AttackRecord


@dataclass
class EvalReport:
    images: list
    attack_names: list
    classes: int
    summary: dict = field(default_factory=dict)
    selections: dict = field(default_factory=dict)  # (variant, target) -> list of names or None
    perturbations: dict | None = None  # image id -> attack name -> delta, when requested

    def minpert_outcomes(self, name: str) -> list:
        return [im.attacks[name] for im in self.images if name in im.attacks]


# -- metric helpers --------------------------------------------------------

def _score(counts: ConfusionCounts, target: str):
    return image_accuracy(counts) if target == "accuracy" else image_miou(counts)


def _dataset_metrics(counts: list) -> dict:
    out = {}
    for key, fn in (("accuracy", pixel_accuracy), ("cmiou", cmiou), ("nmiou", nmiou)):
        try:
            out[key] = fn(counts)
        except UndefinedMetricError:
            out[key] = None
    return out


def aggregate_attacks(per_image: list, target: str, variant: str = "all"):
    """Pick, per image, the attack with the lowest target metric.

    ``per_image`` holds ImageRecords. Ties go to the lowest attack index and
    failed attacks are skipped. Returns ``(selected_names, counts)``, one
    entry per image; an image where no attack produced a score keeps its
    clean counts and a selection of None.
    """
    if target not in TARGETS:
        raise ContractError(f"unknown target metric {target!r}")
    names, counts = [], []
    for im in per_image:
        best_name, best_score = None, math.inf
        for name in sorted(im.attacks, key=lambda n: ATTACK_INDEX.get(n, len(ATTACK_NAMES))):
            rec = im.attacks[name]
            if rec.failed:
                continue
            s = _score(rec.counts[variant], target)
            if s is not None and s < best_score:
                best_name, best_score = name, s
        names.append(best_name)
        counts.append(im.attacks[best_name].counts[variant] if best_name else im.clean[variant])
    return names, counts


def _check_complete(images, attack_names):
    for im in images:
        missing = [n for n in attack_names if n not in im.attacks]
        if missing:
            raise ContractError(f"{im.image_id}: no result for attacks {missing}")


def summarize(images: list, attack_names: list) -> tuple[dict, dict]:
    _check_complete(images, attack_names)
    summary = {"n_images": len(images), "attacks": list(attack_names)}
    selections = {}
    for variant in VARIANTS:
        clean = _dataset_metrics([im.clean[variant] for im in images])
        robust = dict(clean)
        if attack_names:
            sel_acc, counts_acc = aggregate_attacks(images, "accuracy", variant)
            sel_miou, counts_miou = aggregate_attacks(images, "miou", variant)
            robust["accuracy"] = _dataset_metrics(counts_acc)["accuracy"]
            m = _dataset_metrics(counts_miou)
            robust["cmiou"], robust["nmiou"] = m["cmiou"], m["nmiou"]
            selections[(variant, "accuracy")] = sel_acc
            selections[(variant, "miou")] = sel_miou
        per_attack = {}
        for name in attack_names:
            counts = [im.attacks[name].counts[variant] if not im.attacks[name].failed
                      else im.clean[variant] for im in images]
            per_attack[name] = _dataset_metrics(counts)
        summary[variant] = {"clean": clean, "robust": robust, "per_attack": per_attack}
    summary["failures"] = sorted(
        f"{im.image_id}:{n}" for im in images for n, r in im.attacks.items() if r.failed)
    return summary, selections


# -- evaluation ------------------------------------------------------------

def evaluate_image(model, image_id, x, y, attack_names, cfg, classes, background_id=None,
                   perturbations: dict | None = None) -> ImageRecord:
    """Clean and per-attack counts for one image.

    When ``perturbations`` is a dict, each attack's delta is stored in it by name.
    """
    mcfg = {"all": MetricConfig(classes), "nobg": MetricConfig(classes).without(background_id)}

    def counts_for(pred):
        return {v: confusion(pred, y, mcfg[v]) for v in VARIANTS}

    rec = ImageRecord(image_id, counts_for(model.predict(x)))
    for name in attack_names:
        try:
            res = run_attack(name, model, x, y, cfg)
        except (ArithmeticError, ValueError) as exc:
            rec.attacks[name] = AttackRecord(name, {}, failed=f"{type(exc).__name__}: {exc}")
            continue
        if perturbations is not None:
            perturbations[name] = res.perturbation
        ar = AttackRecord(name, counts_for(res.prediction), res.runtime)
        if res.minpert is not None:
            mp = res.minpert
            ar.raw_norm = mp.raw_norm
            ar.achieved_error_ratio = mp.achieved_error_ratio
            ar.norm_at_ratio = dict(mp.norm_at_ratio)
            ar.success = mp.success
        if res.diverged:
            ar.failed = "diverged"
        rec.attacks[name] = ar
    return rec


def _evaluate_image(args):
    *rest, keep = args
    deltas = {} if keep else None
    return evaluate_image(*rest, perturbations=deltas), deltas


def evaluate_model(model: Segmenter, dataset: Dataset, attack_names, cfg: BatteryConfig | None = None,
                   workers: int = 1, keep_perturbations: bool = False) -> EvalReport:
    """Clean and attacked metrics for every image, aggregated per target metric.

    Images are independent tasks; with ``workers > 1`` they run on a process
    pool and results are merged in dataset order. ``keep_perturbations``
    stores every attack's delta in ``report.perturbations``.
    """
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    attack_names = check_names(attack_names)
    cfg = cfg or BatteryConfig(minpert_background_id=dataset.background_id)
    tasks = [(model, image_id, x, y, attack_names, cfg, dataset.classes, dataset.background_id,
              keep_perturbations) for image_id, x, y in dataset]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_image, tasks))
    else:
        results = [_evaluate_image(t) for t in tasks]
    images = [rec for rec, _ in results]
    summary, selections = summarize(images, attack_names)
    deltas = {rec.image_id: d for rec, d in results} if keep_perturbations else None
    return EvalReport(images, attack_names, dataset.classes, summary, selections, deltas)


def best_attack_distribution(report: EvalReport, target: str = "miou", variant: str = "all") -> np.ndarray:
    """Winning-attack counts indexed by canonical attack index (length 10)."""
    hist = np.zeros(len(ATTACK_NAMES), dtype=np.int64)
    for name in report.selections.get((variant, target), []):
        if name is not None:
            hist[ATTACK_INDEX[name]] += 1
    return hist


def image_mious(report: EvalReport, which: str = "robust", variant: str = "all") -> list[float]:
    if which == "clean":
        counts = [im.clean[variant] for im in report.images]
    elif report.attack_names:
        _, counts = aggregate_attacks(report.images, "miou", variant)
    else:
        counts = [im.clean[variant] for im in report.images]
    return [v for v in (image_miou(c) for c in counts) if v is not None]


def miou_histogram(values, bins: int = 20) -> np.ndarray:
    """Fixed-width counts over [0, 1]; the last bin includes 1.0."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size and (v.min() < -1e-9 or v.max() > 1 + 1e-9):
        raise ContractError("mIoU values must lie in [0, 1]")
    counts, _ = np.histogram(np.clip(v, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return counts


def minpert_cdf(outcomes, rho: float) -> list[tuple[float, float]]:
    """Empirical CDF of the smallest norm reaching error ratio ``rho`` per image.

    ``outcomes`` are MinPertOutcome or AttackRecord objects carrying
    ``norm_at_ratio``. Images that never reach ``rho`` count as +inf, so the
    curve plateaus at the success fraction. Returns sorted (norm, fraction)
    pairs at each distinct finite norm.
    """
    outcomes = list(outcomes)
    if not outcomes:
        return []
    norms = []
    for o in outcomes:
        table = o.norm_at_ratio or {}
        v = table.get(rho, table.get(str(rho)))
        norms.append(math.inf if v is None else float(v))
    finite = sorted(n for n in norms if math.isfinite(n))
    total = len(norms)
    points = []
    for i, n in enumerate(finite):
        if i + 1 < len(finite) and finite[i + 1] == n:
            continue
        points.append((n, (i + 1) / total))
    return points


# -- adversarial training --------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    adversarial_fraction: float = 1.0
    inner_steps: int = 3
    inner_eps: float = 8 / 255
    inner_step_size: float | None = None  # default 2 * eps / 3
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.adversarial_fraction <= 1.0:
            raise ContractError("adversarial_fraction must lie in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")


def adversarial_train(spec: ToyModelSpec, dataset: Dataset, cfg: TrainConfig,
                      history: list | None = None) -> Segmenter:
    """Adam on batch CE where a fixed fraction of each batch is PGD-perturbed.

    Adversarial examples come from a zero-start sign-gradient PGD against the
    current parameters. Stops early and returns the last finite snapshot if
    the loss becomes non-finite.
    """
    model = build_model(spec)
    rng = np.random.default_rng(cfg.seed)
    theta = model.params.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    step = cfg.inner_step_size if cfg.inner_step_size is not None else 2 * cfg.inner_eps / 3
    items = dataset.items
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(items))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [items[i] for i in order[start:start + cfg.batch_size]]
            n_adv = int(round(cfg.adversarial_fraction * len(batch)))
            grad = np.zeros_like(theta)
            loss = 0.0
            for k, (_, x, y) in enumerate(batch):
                if k < n_adv:
                    x = x + pgd_attack(model, x, y, cfg.inner_eps, cfg.inner_steps, step)
                z, pullback = model.vjp(x)
                res = loss_ce(z, y)
                loss += res.value
                grad += pullback(res.logit_gradient).parameter_gradient
            loss /= len(batch)
            grad /= len(batch)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                log.warning("non-finite loss at epoch %d; keeping the last finite snapshot", epoch)
                return model
            t += 1
            m = cfg.beta1 * m + (1 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
            m_hat = m / (1 - cfg.beta1 ** t)
            v_hat = v / (1 - cfg.beta2 ** t)
            theta = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            if not np.all(np.isfinite(theta)):
                log.warning("non-finite parameters at epoch %d; keeping the last finite snapshot", epoch)
                return model
            model = model.with_params(theta)
            epoch_loss += loss * len(batch)
        if history is not None:
            history.append(epoch_loss / max(len(items), 1))
        log.debug("epoch %d loss %.4f", epoch, epoch_loss / max(len(items), 1))
    return model
