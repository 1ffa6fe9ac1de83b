"""Independent brute-force metric implementations used as test oracles."""
from __future__ import annotations

from fractions import Fraction

IGNORE = 255


def _mean(values):
    """Exact sum of the float values, rounded once, divided by the count."""
    return float(sum((Fraction(v) for v in values), Fraction(0))) / len(values)


def _pixel_sets(pred, truth, classes, excluded):
    """Per class: the set of truth pixel coordinates and predicted pixel coordinates."""
    t_sets = {c: set() for c in range(classes)}
    p_sets = {c: set() for c in range(classes)}
    for i, (prow, trow) in enumerate(zip(pred, truth)):
        for j, (p, t) in enumerate(zip(prow, trow)):
            if int(t) in excluded:
                continue
            t_sets[int(t)].add((i, j))
            if 0 <= int(p) < classes:
                p_sets[int(p)].add((i, j))
    return t_sets, p_sets


def oracle_image_miou(pred, truth, classes, excluded=(IGNORE,)):
    excluded = set(excluded) | {IGNORE}
    t_sets, p_sets = _pixel_sets(pred, truth, classes, excluded)
    if not any(t_sets.values()):
        return None
    ious = []
    for c in range(classes):
        if c in excluded:
            continue
        union = t_sets[c] | p_sets[c]
        if union:
            ious.append(len(t_sets[c] & p_sets[c]) / len(union))
    return _mean(ious)


def oracle_cmiou(pairs, classes, excluded=(IGNORE,)):
    inter = [0] * classes
    union = [0] * classes
    for k, (pred, truth) in enumerate(pairs):
        t_sets, p_sets = _pixel_sets(pred, truth, classes, set(excluded) | {IGNORE})
        for c in range(classes):
            inter[c] += len(t_sets[c] & p_sets[c])
            union[c] += len(t_sets[c] | p_sets[c])
    vals = [i / u for c, (i, u) in enumerate(zip(inter, union)) if u and c not in excluded]
    return _mean(vals)


def oracle_nmiou(pairs, classes, excluded=(IGNORE,)):
    vals = [v for v in (oracle_image_miou(p, t, classes, excluded) for p, t in pairs) if v is not None]
    return _mean(vals)
