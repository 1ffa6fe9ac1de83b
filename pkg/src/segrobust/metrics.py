"""Pixel accuracy and the two mIoU aggregations.

``cmiou`` sums per-class counts over images before taking ratios;
``nmiou`` averages the per-image mIoU. Classes whose IoU denominator is zero
are left out of the mean rather than scored as 0 or 1. Pixels whose truth id
is excluded are dropped, and an excluded class is left out of the mean.
Means use correctly rounded summation, so results do not depend on order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tensor_core import IGNORE, ContractError


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    classes: int
    excluded_label_ids: frozenset = field(default_factory=lambda: frozenset({IGNORE}))

    def __post_init__(self):
        object.__setattr__(self, "excluded_label_ids",
                           frozenset(self.excluded_label_ids) | {IGNORE})

    def without(self, label_id: int | None) -> "MetricConfig":
        """A copy that additionally drops ``label_id`` (e.g. background)."""
        if label_id is None:
            return self
        return MetricConfig(self.classes, self.excluded_label_ids | {label_id})


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @property
    def evaluated(self) -> int:
        return int(self.tp.sum() + self.fn.sum())

    def to_dict(self) -> dict:
        return {"tp": self.tp.tolist(), "fp": self.fp.tolist(), "fn": self.fn.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionCounts":
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("tp", "fp", "fn")))


def confusion(pred, truth, cfg: MetricConfig) -> ConfusionCounts:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ContractError(f"prediction {pred.shape} vs truth {truth.shape}")
    keep = ~np.isin(truth, list(cfg.excluded_label_ids))
    t = truth[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    c = cfg.classes
    # predictions outside 0..C-1 only ever count as misses
    p_in = (p >= 0) & (p < c)
    mat = np.bincount(t[p_in] * c + p[p_in], minlength=c * c).reshape(c, c)
    tp = np.diag(mat).copy()
    fp = mat.sum(axis=0) - tp
    fn = np.bincount(t, minlength=c)[:c] - tp
    # an excluded class also leaves the IoU mean: drop its false positives
    dropped = [k for k in cfg.excluded_label_ids if 0 <= k < c]
    fp[dropped] = 0
    return ConfusionCounts(tp, fp, fn)


def pixel_accuracy(counts: Iterable[ConfusionCounts]) -> float:
    counts = list(counts)
    correct = sum(int(c.tp.sum()) for c in counts)
    total = sum(c.evaluated for c in counts)
    if total == 0:
        raise UndefinedMetricError("pixel accuracy over zero evaluated pixels")
    return correct / total


def _mean_iou(tp, fp, fn) -> float | None:
    denom = tp + fp + fn
    present = denom > 0
    if not np.any(present):
        return None
    ratios = tp[present] / denom[present]
    return math.fsum(ratios.tolist()) / len(ratios)


def image_miou(counts: ConfusionCounts) -> float | None:
    """Mean IoU over classes present in this image's truth or prediction.

    Returns None when the image has no evaluated pixels.
    """
    if counts.evaluated == 0:
        return None
    return _mean_iou(counts.tp, counts.fp, counts.fn)


def cmiou(counts: Sequence[ConfusionCounts]) -> float:
    if len(counts) == 0:
        raise UndefinedMetricError("cmiou over zero images")
    tp = sum(c.tp for c in counts)
    fp = sum(c.fp for c in counts)
    fn = sum(c.fn for c in counts)
    value = _mean_iou(tp, fp, fn)
    if value is None:
        raise UndefinedMetricError("cmiou: every class has a zero denominator")
    return value


def nmiou(counts: Sequence[ConfusionCounts]) -> float:
    if len(counts) == 0:
        raise UndefinedMetricError("nmiou over zero images")
    values = [v for v in (image_miou(c) for c in counts) if v is not None]
    if not values:
        raise UndefinedMetricError("nmiou: no image has evaluated pixels")
    return math.fsum(values) / len(values)


def image_accuracy(counts: ConfusionCounts) -> float | None:
    if counts.evaluated == 0:
        return None
    return int(counts.tp.sum()) / counts.evaluated


def write_counts_csv(path, rows: Iterable[tuple[str, ConfusionCounts]]) -> None:
    """One CSV row per (image id, class): image_id, class, tp, fp, fn."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "class", "tp", "fp", "fn"])
        for image_id, c in rows:
            for k in range(len(c.tp)):
                w.writerow([image_id, k, int(c.tp[k]), int(c.fp[k]), int(c.fn[k])])
