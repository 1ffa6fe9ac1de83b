"""Maximum-damage attacks: projected AMSGrad (PAdam) and the SEA engine.

Both engines maximize ``sign * loss`` where the sign flips losses that an
attacker wants to drive down (cosine similarity, masked spherical loss).
The returned perturbation is the best iterate under that objective, and it
always satisfies ``|delta| <= eps`` and ``0 <= x + delta <= 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..losses import ATTACK_SIGN, compute_loss
from ..metrics import MetricConfig, confusion, image_accuracy, image_miou
from ..models import Segmenter, predict_mask
from ..tensor_core import IGNORE, ContractError, linf_norm, project_linf_box

PADAM_LOSSES = ("ce", "cossim")
SEA_LOSSES = ("sea-bce", "sea-mce", "sea-jsd", "sea-msl")


@dataclass
class MaxDamageConfig:
    eps: float = 8 / 255
    steps: int = 200
    step_size: float = 2 / 255
    loss: str = "ce"
    engine: str = "padam"
    init: str = "zero"
    seed: int = 0
    # AMSGrad constants
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # SEA schedule
    radius_factors: tuple = (2.0, 1.5, 1.0)
    momentum: float = 0.75
    improve_threshold: float = 0.75
    checkpoints_per_phase: int = 7
    # ground-truth ids treated as IGNORE by the attack loss
    masked_ids: tuple = ()
    # SEA best-iterate criterion: "loss" (own objective) or "accuracy"
    select: str = "loss"

    def __post_init__(self):
        if self.eps < 0:
            raise ContractError("eps must be non-negative")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.step_size <= 0:
            raise ContractError("step_size must be positive")
        if self.engine not in ("padam", "sea"):
            raise ContractError(f"unknown engine {self.engine!r}")
        if self.init not in ("zero", "uniform-random"):
            raise ContractError(f"unknown init {self.init!r}")
        if self.select not in ("loss", "accuracy"):
            raise ContractError(f"unknown selection rule {self.select!r}")


@dataclass
class AttackOutcome:
    perturbation: np.ndarray
    adversarial_mask: np.ndarray
    accuracy: float | None
    miou: float | None
    iterations_run: int
    best_objective_trace: list = field(default_factory=list)
    diverged: bool = False


def _masked_labels(y, masked_ids):
    y = np.asarray(y)
    if not masked_ids:
        return y
    return np.where(np.isin(y, list(masked_ids)), IGNORE, y)


class _Objective:
    """Signed loss and its input gradient at ``x + delta``."""

    def __init__(self, model: Segmenter, x, y, kind: str):
        self.model = model
        self.x = x
        self.y = y
        self.kind = kind
        self.sign = ATTACK_SIGN[kind]

    def __call__(self, delta, **loss_kw):
        z, pullback = self.model.vjp(self.x + delta)
        res = compute_loss(self.kind, z, self.y, **loss_kw)
        g = pullback(res.logit_gradient).input_gradient
        self.last_logits = z
        return self.sign * res.value, self.sign * g


def _finish(model, x, y, delta, iters, trace, diverged) -> AttackOutcome:
    pred = model.predict(x + delta)
    counts = confusion(pred, y, MetricConfig(model.classes))
    return AttackOutcome(delta, pred, image_accuracy(counts), image_miou(counts),
                         iters, trace, diverged)


def _init_delta(x, cfg: MaxDamageConfig, radius: float):
    if cfg.init == "zero" or radius == 0:
        return np.zeros_like(x)
    rng = np.random.default_rng(cfg.seed)
    return project_linf_box(x, rng.uniform(-radius, radius, x.shape), radius)


def padam_attack(model: Segmenter, x, y, cfg: MaxDamageConfig) -> AttackOutcome:
    """Projected AMSGrad ascent on CE, or descent on cosine similarity."""
    if cfg.loss not in PADAM_LOSSES:
        raise ContractError(f"PAdam supports {PADAM_LOSSES}, got {cfg.loss!r}")
    x = np.asarray(x, dtype=np.float64)
    y_att = _masked_labels(y, cfg.masked_ids)
    f = _Objective(model, x, y_att, cfg.loss)

    delta = _init_delta(x, cfg, cfg.eps)
    obj, g = f(delta)
    best, best_delta = obj, delta
    trace = [best]
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    v_max = np.zeros_like(x)
    b1, b2 = cfg.beta1, cfg.beta2
    diverged = False
    iters = 0
    for t in range(1, cfg.steps + 1):
        if not np.all(np.isfinite(g)):
            diverged = True
            break
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        np.maximum(v_max, v, out=v_max)
        m_hat = m / (1 - b1 ** t)
        v_hat = v_max / (1 - b2 ** t)
        delta = project_linf_box(x, delta + cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.adam_eps),
                                 cfg.eps)
        obj, g = f(delta)
        iters = t
        if not math.isfinite(obj):
            diverged = True
            break
        if obj > best:
            best, best_delta = obj, delta
        trace.append(best)
    return _finish(model, x, y, best_delta, iters, trace, diverged)


def bce_weight(t: int, total: int) -> float:
    """Weight on still-correct pixels at iteration ``t``: 1 at the start, 0.5 at the end."""
    return 1.0 - 0.5 * t / max(total, 1)


def sea_attack(model: Segmenter, x, y, cfg: MaxDamageConfig) -> AttackOutcome:
    """APGD-style ascent with momentum and progressive radius reduction.

    The budget is split into one phase per radius factor (2, 1.5, 1 times eps
    by default). Each phase restarts from the best point so far, projected
    into the smaller ball. The step size starts at twice the phase radius and
    halves at a checkpoint when fewer than ``improve_threshold`` of the steps
    since the previous checkpoint improved the phase best. After each halving
    the iterate jumps back to the phase best.

    With ``select="accuracy"`` iterates are ranked by the fraction of wrong
    pixels (loss as tie-breaker) instead of by the loss alone.
    """
    if cfg.loss not in SEA_LOSSES:
        raise ContractError(f"SEA supports {SEA_LOSSES}, got {cfg.loss!r}")
    x = np.asarray(x, dtype=np.float64)
    y_att = _masked_labels(y, cfg.masked_ids)
    f = _Objective(model, x, y_att, cfg.loss)
    eps = cfg.eps

    valid = y_att != IGNORE
    n_valid = max(int(valid.sum()), 1)

    def evaluate(delta, t):
        kw = {"lam": bce_weight(t, cfg.steps)} if cfg.loss == "sea-bce" else {}
        obj, g = f(delta, **kw)
        if cfg.select == "accuracy":
            wrong = (predict_mask(f.last_logits) != y_att) & valid
            obj = float(wrong.sum()) / n_valid + 1e-6 * obj
        return obj, g

    n_phases = len(cfg.radius_factors)
    base = cfg.steps // n_phases
    phase_lengths = [base] * (n_phases - 1) + [cfg.steps - base * (n_phases - 1)]

    carry = _init_delta(x, cfg, cfg.radius_factors[0] * eps)
    # best iterate that is feasible at the final radius
    best_feasible, best_feasible_obj = np.zeros_like(x), -math.inf
    trace = []
    diverged = False
    t = 0

    def note_feasible(delta, obj):
        nonlocal best_feasible, best_feasible_obj
        if linf_norm(delta) <= eps and obj > best_feasible_obj:
            best_feasible, best_feasible_obj = delta, obj

    for factor, n in zip(cfg.radius_factors, phase_lengths):
        radius = factor * eps
        delta = project_linf_box(x, carry, radius)
        obj, g = evaluate(delta, t)
        if not (math.isfinite(obj) and np.all(np.isfinite(g))):
            diverged = True
            break
        note_feasible(delta, obj)
        if not trace:
            trace.append(best_feasible_obj)
        phase_best, phase_best_delta, phase_best_grad = obj, delta, g
        eta = 2.0 * radius
        interval = max(1, math.ceil(n / cfg.checkpoints_per_phase))
        improved = 0
        prev = delta
        for i in range(n):
            t += 1
            z = project_linf_box(x, delta + eta * np.sign(g), radius)
            if i == 0:
                new = z
            else:
                a = cfg.momentum
                new = project_linf_box(x, delta + a * (z - delta) + (1 - a) * (delta - prev), radius)
            prev, delta = delta, new
            obj, g = evaluate(delta, t)
            if not (math.isfinite(obj) and np.all(np.isfinite(g))):
                diverged = True
                break
            if obj > phase_best:
                phase_best, phase_best_delta, phase_best_grad = obj, delta, g
                improved += 1
            note_feasible(delta, obj)
            trace.append(best_feasible_obj)
            if (i + 1) % interval == 0:
                if improved < cfg.improve_threshold * interval:
                    eta /= 2.0
                    delta, g = phase_best_delta, phase_best_grad
                    prev = delta
                improved = 0
        carry = phase_best_delta
        if diverged:
            break

    # the last phase runs at radius eps, so its best is feasible; guard anyway
    if best_feasible_obj == -math.inf:
        best_feasible = project_linf_box(x, carry, eps)
    return _finish(model, x, y, best_feasible, t, trace, diverged)


def pgd_attack(model: Segmenter, x, y, eps: float, steps: int = 10, step_size: float | None = None,
               loss: str = "ce") -> np.ndarray:
    """Plain sign-gradient PGD from a zero start; returns the last iterate."""
    x = np.asarray(x, dtype=np.float64)
    if step_size is None:
        step_size = 2.0 * eps / 3.0
    f = _Objective(model, x, np.asarray(y), loss)
    delta = np.zeros_like(x)
    if eps == 0:
        return delta
    for _ in range(steps):
        _, g = f(delta)
        delta = project_linf_box(x, delta + step_size * np.sign(g), eps)
    return delta


def run_max_damage(model, x, y, cfg: MaxDamageConfig) -> AttackOutcome:
    if cfg.engine == "padam":
        return padam_attack(model, x, y, cfg)
    return sea_attack(model, x, y, cfg)
