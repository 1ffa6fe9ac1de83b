"""Attack losses over logit fields, each with an exact logit gradient.

Every loss skips IGNORE pixels. The masked SEA losses also skip pixels whose
current prediction is already wrong. Callers can pass ``correct=`` to freeze
that mask, which keeps finite-difference checks on one smooth piece.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import IGNORE, ContractError, log_softmax_field, onehot, softmax_field

LOSS_KINDS = ("ce", "cossim", "sea-bce", "sea-mce", "sea-jsd", "sea-msl")

# +1: attacks ascend the loss, -1: attacks descend it
ATTACK_SIGN = {"ce": 1.0, "cossim": -1.0, "sea-bce": 1.0, "sea-mce": 1.0,
               "sea-jsd": 1.0, "sea-msl": -1.0}

_TINY = 1e-12


@dataclass
class LossResult:
    value: float
    logit_gradient: np.ndarray
    active_pixels: int


def _check(z, y):
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    if z.shape[:-1] != y.shape:
        raise ContractError(f"logits {z.shape} do not match mask {y.shape}")
    return z, y


def _correct_mask(z, y, correct):
    valid = y != IGNORE
    if correct is None:
        return valid & (np.argmax(z, axis=-1) == y)
    correct = np.asarray(correct, dtype=bool)
    if correct.shape != y.shape:
        raise ContractError(f"pixel mask {correct.shape} does not match {y.shape}")
    return correct & valid


def _weighted_ce(z, y, weights, norm):
    """sum_p weights_p * CE_p / norm, with its logit gradient."""
    grad = np.zeros_like(z)
    if norm == 0 or not np.any(weights):
        return 0.0, grad
    sel = weights > 0
    yy = np.where(sel, y, 0).astype(np.intp)
    logp = log_softmax_field(z[sel])
    ce = -np.take_along_axis(logp, yy[sel][:, None], axis=-1)[:, 0]
    w = weights[sel]
    value = float(np.sum(w * ce) / norm)
    g = np.exp(logp)
    g[np.arange(g.shape[0]), yy[sel]] -= 1.0
    grad[sel] = g * (w / norm)[:, None]
    return value, grad


def loss_ce(z, y) -> LossResult:
    """Mean pixel cross-entropy over non-IGNORE pixels."""
    z, y = _check(z, y)
    valid = y != IGNORE
    n = int(valid.sum())
    value, grad = _weighted_ce(z, y, valid.astype(np.float64), n)
    return LossResult(value, grad, n)


def loss_cossim(z, y) -> LossResult:
    """Cosine similarity of the flattened one-hot label and logit tensors.

    Logits at IGNORE pixels are excluded from the logit norm as well, so the
    loss does not depend on them.
    """
    z, y = _check(z, y)
    valid = y != IGNORE
    n = int(valid.sum())
    grad = np.zeros_like(z)
    if n == 0:
        return LossResult(0.0, grad, 0)
    a = onehot(y, z.shape[-1])
    zm = z * valid[..., None]
    za = float(np.sqrt(np.sum(zm ** 2)))
    aa = float(np.sqrt(n))
    if za < _TINY:
        return LossResult(0.0, grad, n)
    value = float(np.sum(a * zm) / (aa * za))
    grad = (a / (aa * za) - value * zm / za ** 2) * valid[..., None]
    return LossResult(value, grad, n)


def loss_sea_bce(z, y, lam: float = 1.0, correct=None) -> LossResult:
    """Balanced CE: weight ``lam`` on correct pixels, ``1 - lam`` on wrong ones.

    Normalized by the total number of non-IGNORE pixels.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lam must lie in [0, 1], got {lam}")
    z, y = _check(z, y)
    valid = y != IGNORE
    ok = _correct_mask(z, y, correct)
    weights = np.where(ok, lam, np.where(valid, 1.0 - lam, 0.0))
    n = int(valid.sum())
    value, grad = _weighted_ce(z, y, weights, n)
    return LossResult(value, grad, n)


def loss_sea_mce(z, y, correct=None) -> LossResult:
    """CE averaged over the pixels that are still classified correctly."""
    z, y = _check(z, y)
    ok = _correct_mask(z, y, correct)
    n = int(ok.sum())
    value, grad = _weighted_ce(z, y, ok.astype(np.float64), n)
    return LossResult(value, grad, n)


def loss_sea_jsd(z, y) -> LossResult:
    """Mean Jensen-Shannon divergence between softmax(z) and one-hot(y)."""
    z, y = _check(z, y)
    valid = y != IGNORE
    n = int(valid.sum())
    grad = np.zeros_like(z)
    if n == 0:
        return LossResult(0.0, grad, 0)
    p = softmax_field(z[valid])
    q = onehot(y[valid], z.shape[-1])
    m = 0.5 * (p + q)
    logp = log_softmax_field(z[valid])
    logm = np.log(np.maximum(m, 1e-300))
    kl_pm = np.sum(p * (logp - logm), axis=-1)
    kl_qm = -np.sum(q * logm, axis=-1)  # q log q = 0 for a one-hot q
    value = float(np.sum(0.5 * kl_pm + 0.5 * kl_qm) / n)
    # dJSD/dp_c = 0.5 * log(p_c / m_c); push through the softmax Jacobian
    gp = 0.5 * (logp - logm)
    gz = p * (gp - np.sum(p * gp, axis=-1, keepdims=True))
    grad[valid] = gz / n
    return LossResult(value, grad, n)


def loss_sea_msl(z, y, correct=None) -> LossResult:
    """Mean of z_y / ||z||_2 over still-correct pixels (attacks minimize it)."""
    z, y = _check(z, y)
    ok = _correct_mask(z, y, correct)
    n = int(ok.sum())
    grad = np.zeros_like(z)
    if n == 0:
        return LossResult(0.0, grad, 0)
    zs = z[ok]
    yy = y[ok].astype(np.intp)
    norms = np.sqrt(np.sum(zs ** 2, axis=-1))
    safe = norms >= _TINY
    zy = zs[np.arange(len(yy)), yy]
    ratio = np.where(safe, zy / np.where(safe, norms, 1.0), 0.0)
    value = float(np.sum(ratio) / n)
    g = -(zy / np.where(safe, norms, 1.0) ** 3)[:, None] * zs
    g[np.arange(len(yy)), yy] += 1.0 / np.where(safe, norms, 1.0)
    g[~safe] = 0.0
    grad[ok] = g / n
    return LossResult(value, grad, n)


_LOSSES = {
    "ce": loss_ce,
    "cossim": loss_cossim,
    "sea-bce": loss_sea_bce,
    "sea-mce": loss_sea_mce,
    "sea-jsd": loss_sea_jsd,
    "sea-msl": loss_sea_msl,
}


def compute_loss(kind: str, z, y, **kw) -> LossResult:
    try:
        fn = _LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; expected one of {LOSS_KINDS}") from None
    return fn(z, y, **kw)
