"""Minimum-perturbation attacks (DAG, ALMAProx-style, PDPGD-style) and clipping.

These attacks search for the smallest l-inf perturbation that makes a target
fraction ``rho`` of the attacked pixels wrong. Results are unconstrained;
``clip_to_budget`` maps them into the eps-ball for comparison with the
maximum-damage attacks.

Attacked pixels are the non-IGNORE pixels whose ground truth is not the
(optional) background id. For pixel i with label y_i the margin
``g_i = z_{y_i} - max_{c != y_i} z_c`` is positive while the pixel is still
classified correctly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..losses import loss_sea_mce
from ..models import Segmenter, predict_mask
from ..tensor_core import IGNORE, ContractError, linf_norm, project_linf_box

CDF_RATIOS = (0.9, 0.99)


@dataclass
class MinPertConfig:
    max_iters: int = 200
    rho: float = 0.99
    seed: int = 0
    background_id: int | None = None
    # DAG
    dag_step: float = 0.003
    # ALMAProx-style; step sizes decay from *_lr to *_lr_final (cosine)
    alma_lr: float = 0.01
    alma_lr_final: float = 1e-4
    alma_tau: float = 0.05
    alma_mu: float = 1.0
    alma_mu_growth: float = 1.2
    alma_mu_every: int = 10
    # PDPGD-style
    pd_lr: float = 0.01
    pd_lr_final: float = 1e-4
    pd_shrink: float = 0.001
    pd_dual_lr: float = 0.1
    pd_dual_init: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ContractError(f"rho must lie in (0, 1], got {self.rho}")
        if self.max_iters < 0:
            raise ContractError("max_iters must be non-negative")
        if self.dag_step <= 0:
            raise ContractError("dag_step must be positive")


@dataclass
class MinPertOutcome:
    raw_perturbation: np.ndarray
    achieved_error_ratio: float
    raw_norm: float
    iterations_run: int
    success: bool
    stalled: bool = False
    # smallest recorded norm reaching each error ratio in CDF_RATIOS (None if never)
    norm_at_ratio: dict = field(default_factory=dict)
    increments: list = field(default_factory=list)


class _Tracker:
    """Records per-iterate error ratios and the smallest norms reaching them."""

    def __init__(self, model, x, y, cfg: MinPertConfig):
        self.model, self.x, self.y, self.cfg = model, x, y, cfg
        self.targets = y != IGNORE
        if cfg.background_id is not None:
            self.targets &= y != cfg.background_id
        self.n_targets = int(self.targets.sum())
        self.norm_at = {r: None for r in set(CDF_RATIOS) | {cfg.rho}}
        self.best_success = None  # (norm, delta, ratio)
        self.best_error = None  # (ratio, -norm, delta)

    def ratio(self, pred) -> float:
        if self.n_targets == 0:
            return 1.0
        return float(np.mean(pred[self.targets] != self.y[self.targets]))

    def record(self, delta, pred) -> float:
        r = self.ratio(pred)
        n = linf_norm(delta)
        for thr in self.norm_at:
            if r >= thr and (self.norm_at[thr] is None or n < self.norm_at[thr]):
                self.norm_at[thr] = n
        if r >= self.cfg.rho and (self.best_success is None or n < self.best_success[0]):
            self.best_success = (n, delta, r)
        if self.best_error is None or (r, -n) > self.best_error[:2]:
            self.best_error = (r, -n, delta)
        return r

    def outcome(self, iters, stalled=False, increments=None) -> MinPertOutcome:
        if self.best_success is not None:
            n, delta, r = self.best_success
            success = True
        else:
            r, _, delta = self.best_error
            success = False
        return MinPertOutcome(delta, r, linf_norm(delta), iters, success, stalled,
                              {k: self.norm_at[k] for k in CDF_RATIOS}, increments or [])


def _box(x, delta):
    return np.clip(x + delta, 0.0, 1.0) - x


def _margins(z, y, targets):
    """Per-pixel margin g and its logit gradient (e_y - e_runner_up) at targets."""
    y_safe = np.where(targets, y, 0).astype(np.intp)
    rows = np.arange(z.shape[-1])
    zy = np.take_along_axis(z, y_safe[..., None], axis=-1)[..., 0]
    others = np.where(rows == y_safe[..., None], -np.inf, z)
    runner = np.argmax(others, axis=-1)
    zr = np.take_along_axis(z, runner[..., None], axis=-1)[..., 0]
    g = np.where(targets, zy - zr, 0.0)
    dg = np.zeros_like(z)
    ii, jj = np.nonzero(targets)
    dg[ii, jj, y_safe[ii, jj]] = 1.0
    dg[ii, jj, runner[ii, jj]] -= 1.0
    return g, dg


def dag_attack(model: Segmenter, x, y, cfg: MinPertConfig) -> MinPertOutcome:
    """Untargeted DAG: normalized CE ascent on still-correct target pixels.

    Each update adds ``dag_step * g / ||g||_inf`` and then clamps to the
    image box. Stops once every target pixel is wrong or after ``max_iters``
    updates; the final iterate is reported.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    tr = _Tracker(model, x, y, cfg)
    y_att = np.where(tr.targets, y, IGNORE)
    delta = np.zeros_like(x)
    increments = []
    iters = 0
    stalled = False
    while True:
        z, pullback = model.vjp(x + delta)
        pred = predict_mask(z)
        ratio = tr.record(delta, pred)
        still = tr.targets & (pred == y)
        if not still.any() or iters >= cfg.max_iters:
            break
        res = loss_sea_mce(z, y_att, correct=still)
        grad = pullback(res.logit_gradient).input_gradient
        gmax = linf_norm(grad)
        if gmax == 0.0:
            stalled = True
            break
        step = cfg.dag_step * grad / gmax
        increments.append(linf_norm(step))
        delta = _box(x, delta + step)
        iters += 1
    return MinPertOutcome(delta, ratio, linf_norm(delta), iters, ratio >= cfg.rho, stalled,
                          {k: tr.norm_at[k] for k in CDF_RATIOS}, increments)


def _step_size(k, total, start, end):
    """Cosine decay from ``start`` (k=0) to ``end`` (k=total)."""
    frac = k / max(total, 1)
    return end + (start - end) * 0.5 * (1.0 + np.cos(np.pi * frac))


def _normalized(d):
    m = linf_norm(d)
    return d / m if m > 0 else d


def _smooth_linf_grad(delta, tau):
    """Gradient of tau * logsumexp(|delta| / tau)."""
    a = np.abs(delta).ravel() / tau
    w = np.exp(a - a.max())
    w /= w.sum()
    return w.reshape(delta.shape) * np.sign(delta)


def almaprox_attack(model: Segmenter, x, y, cfg: MinPertConfig) -> MinPertOutcome:
    """Augmented-Lagrangian penalty descent with a smoothed l-inf objective.

    Minimizes ``tau*LSE(|delta|/tau) + sum_i [lam_i g_i + mu/2 g_i^2]`` over
    target pixels with g_i > 0. Multipliers follow ``lam_i <- max(0, lam_i +
    mu g_i)`` each iteration; ``mu`` grows by ``alma_mu_growth`` every
    ``alma_mu_every`` iterations while the error ratio is below rho.

    Steps move along the l-inf normalized gradient with a cosine-decayed
    length, so the final oscillation around the decision boundary shrinks to
    ``alma_lr_final``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    tr = _Tracker(model, x, y, cfg)
    delta = np.zeros_like(x)
    lam = np.zeros(y.shape)
    mu = cfg.alma_mu
    iters = 0
    stalled = False
    for it in range(cfg.max_iters + 1):
        z, pullback = model.vjp(x + delta)
        pred = predict_mask(z)
        ratio = tr.record(delta, pred)
        if it == 0 and ratio >= cfg.rho:
            break  # the clean prediction already satisfies the constraint
        if it == cfg.max_iters:
            break
        g, dg = _margins(z, y, tr.targets)
        active = g > 0
        coef = np.where(active, lam + mu * g, 0.0)
        grad = pullback(dg * coef[..., None]).input_gradient
        grad = grad + _smooth_linf_grad(delta, cfg.alma_tau)
        if not np.any(grad) and ratio < cfg.rho:
            stalled = True
            break
        eta = _step_size(it, cfg.max_iters, cfg.alma_lr, cfg.alma_lr_final)
        delta = _box(x, delta - eta * _normalized(grad))
        lam = np.where(tr.targets, np.maximum(0.0, lam + mu * g), 0.0)
        iters += 1
        if iters % cfg.alma_mu_every == 0 and ratio < cfg.rho:
            mu *= cfg.alma_mu_growth
    return tr.outcome(iters, stalled)


def shrink_max(v, weight):
    """Soft-shrink the largest-magnitude coordinates of ``v`` by ``weight``.

    Every coordinate is clipped to ``max|v| - weight`` in magnitude, which
    lowers the l-inf norm by exactly ``weight`` (or to zero).
    """
    top = linf_norm(v)
    if weight <= 0 or top == 0.0:
        return v.copy()
    cap = max(top - weight, 0.0)
    return np.clip(v, -cap, cap)


def pdpgd_attack(model: Segmenter, x, y, cfg: MinPertConfig, *, dual_trace: list | None = None
                 ) -> MinPertOutcome:
    """Primal-dual proximal descent with one dual variable per target pixel.

    Primal: normalized gradient step on ``sum_i lam_i max(0, g_i)`` with a
    cosine-decayed length, then ``shrink_max`` with weight ``pd_shrink``.
    Dual: ``lam_i <- max(0, lam_i + pd_dual_lr * g_i)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    tr = _Tracker(model, x, y, cfg)
    delta = np.zeros_like(x)
    lam = np.where(tr.targets, cfg.pd_dual_init, 0.0)
    iters = 0
    stalled = False
    for it in range(cfg.max_iters + 1):
        z, pullback = model.vjp(x + delta)
        pred = predict_mask(z)
        ratio = tr.record(delta, pred)
        if it == 0 and ratio >= cfg.rho:
            break
        if it == cfg.max_iters:
            break
        g, dg = _margins(z, y, tr.targets)
        coef = np.where(g > 0, lam, 0.0)
        grad = pullback(dg * coef[..., None]).input_gradient
        if not np.any(grad) and not np.any(delta):
            stalled = True
            break
        eta = _step_size(it, cfg.max_iters, cfg.pd_lr, cfg.pd_lr_final)
        delta = _box(x, shrink_max(delta - eta * _normalized(grad), cfg.pd_shrink))
        z_new = model.forward(x + delta)
        g_new, _ = _margins(z_new, y, tr.targets)
        lam = np.where(tr.targets, np.maximum(0.0, lam + cfg.pd_dual_lr * g_new), 0.0)
        if dual_trace is not None:
            dual_trace.append(lam.copy())
        iters += 1
    return tr.outcome(iters, stalled)


def clip_to_budget(outcome, eps: float, x=None, mode: str = "rescale") -> np.ndarray:
    """Map a raw min-perturbation result into the eps-ball.

    ``mode="rescale"`` scales the whole perturbation by ``eps / ||delta||_inf``
    when its norm exceeds eps, keeping its direction; ``mode="clamp"`` clamps
    component-wise. With ``x`` given, the result is also clamped to the box.
    """
    delta = outcome.raw_perturbation if isinstance(outcome, MinPertOutcome) else np.asarray(outcome)
    delta = np.asarray(delta, dtype=np.float64)
    n = linf_norm(delta)
    if n <= eps:
        out = delta
    elif mode == "rescale":
        out = delta * (eps / n)
        # rounding can leave one ulp above eps
        out = np.clip(out, -eps, eps)
    elif mode == "clamp":
        out = np.clip(delta, -eps, eps)
    else:
        raise ContractError(f"unknown clip mode {mode!r}")
    if x is not None:
        out = project_linf_box(x, out, eps)
    return out


def run_min_pert(model, x, y, algorithm: str, cfg: MinPertConfig) -> MinPertOutcome:
    if algorithm == "dag":
        return dag_attack(model, x, y, cfg)
    if algorithm == "almaprox":
        return almaprox_attack(model, x, y, cfg)
    if algorithm == "pdpgd":
        return pdpgd_attack(model, x, y, cfg)
    raise ContractError(f"unknown min-perturbation algorithm {algorithm!r}")
