"""Dense array primitives shared across the package.

All fields are channel-last numpy arrays: images are ``(H, W, 3)``,
logit/probability fields are ``(H, W, C)`` and label masks are ``(H, W)``
integer arrays where ``IGNORE`` marks void pixels.
"""
from __future__ import annotations

import numpy as np

IGNORE = 255


class InvalidInputError(ValueError):
    pass


class InvalidLabelError(ValueError):
    pass


class ContractError(ValueError):
    pass


def softmax_field(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax_field: non-finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_field(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def onehot(y: np.ndarray, classes: int) -> np.ndarray:
    """One-hot encode a label mask; IGNORE pixels become all-zero vectors."""
    y = np.asarray(y)
    valid = y != IGNORE
    if np.any(y[valid] < 0) or np.any(y[valid] >= classes):
        raise InvalidLabelError(f"label id out of range for {classes} classes")
    out = np.zeros(y.shape + (classes,), dtype=np.float64)
    idx = np.nonzero(valid)
    out[idx + (y[valid].astype(np.intp),)] = 1.0
    return out


def project_linf_box(x: np.ndarray, d: np.ndarray, eps: float) -> np.ndarray:
    """Clamp ``d`` into the eps-ball intersected with the box ``0 <= x + d <= 1``.

    Both constraint sets are axis-aligned, so the component-wise clamp is the
    Euclidean projection onto their intersection. Feasible inputs come back
    unchanged bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if x.shape != d.shape:
        raise ContractError(f"shape mismatch: image {x.shape} vs perturbation {d.shape}")
    lo = np.maximum(-eps, -x)
    hi = np.minimum(eps, 1.0 - x)
    # x + (1 - x) may round above 1; keep the box check exact in float64
    r = np.clip(d, lo, hi)
    over = x + r > 1.0
    if np.any(over):
        r = np.where(over, np.nextafter(r, -np.inf), r)
    under = x + r < 0.0
    if np.any(under):
        r = np.where(under, np.nextafter(r, np.inf), r)
    feasible = (np.abs(d) <= eps) & (x + d >= 0.0) & (x + d <= 1.0)
    return np.where(feasible, d, r)


def linf_norm(d: np.ndarray) -> float:
    d = np.asarray(d)
    if d.size == 0:
        return 0.0
    return float(np.max(np.abs(d)))
