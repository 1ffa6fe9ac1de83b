"""The ten-attack battery and a uniform way to run any member of it."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .maxdamage import (AttackOutcome, MaxDamageConfig, padam_attack, pgd_attack,
                        run_max_damage, sea_attack)
from .minpert import (MinPertConfig, MinPertOutcome, almaprox_attack, clip_to_budget,
                      dag_attack, pdpgd_attack, run_min_pert)

# canonical order; the list index is the attack index used in reports
ATTACK_NAMES = (
    "almaprox", "padam-ce", "padam-cos", "dag-0.001", "dag-0.003",
    "pdpgd", "sea-jsd", "sea-mce", "sea-msl", "sea-bce",
)
ATTACK_INDEX = {name: i for i, name in enumerate(ATTACK_NAMES)}

DEFAULT_STEPS = {"padam": 200, "sea": 300, "minpert": 200}


class UnknownAttackError(KeyError):
    def __str__(self):
        return f"unknown attack {self.args[0]!r}; valid names: {', '.join(ATTACK_NAMES)}"


def check_names(names) -> list[str]:
    names = list(names)
    for n in names:
        if n not in ATTACK_INDEX:
            raise UnknownAttackError(n)
    return names


def scaled(steps: int, fidelity: float) -> int:
    return max(1, int(round(steps * fidelity)))


@dataclass
class BatteryConfig:
    eps: float = 8 / 255
    fidelity: float = 1.0
    seed: int = 0
    # background id excluded from min-perturbation targets (None: attack all pixels)
    minpert_background_id: int | None = None
    # ground-truth ids dropped from max-damage losses
    maxdamage_masked_ids: tuple = ()
    clip_mode: str = "rescale"
    rho: float = 0.99


@dataclass
class AttackResult:
    name: str
    perturbation: np.ndarray  # feasible at eps
    prediction: np.ndarray
    runtime: float
    minpert: MinPertOutcome | None = None
    diverged: bool = False


def max_damage_config(name: str, cfg: BatteryConfig) -> MaxDamageConfig:
    if name.startswith("padam-"):
        loss = {"padam-ce": "ce", "padam-cos": "cossim"}[name]
        return MaxDamageConfig(eps=cfg.eps, steps=scaled(DEFAULT_STEPS["padam"], cfg.fidelity),
                               step_size=2 / 255, loss=loss, engine="padam", seed=cfg.seed,
                               masked_ids=tuple(cfg.maxdamage_masked_ids))
    return MaxDamageConfig(eps=cfg.eps, steps=scaled(DEFAULT_STEPS["sea"], cfg.fidelity),
                           step_size=2 * cfg.eps if cfg.eps > 0 else 1.0, loss=name,
                           engine="sea", seed=cfg.seed, masked_ids=tuple(cfg.maxdamage_masked_ids))


def min_pert_config(name: str, cfg: BatteryConfig) -> MinPertConfig:
    kw = {}
    if name.startswith("dag-"):
        kw["dag_step"] = float(name.split("-", 1)[1])
    return MinPertConfig(max_iters=scaled(DEFAULT_STEPS["minpert"], cfg.fidelity), rho=cfg.rho,
                         seed=cfg.seed, background_id=cfg.minpert_background_id, **kw)


def run_attack(name: str, model, x, y, cfg: BatteryConfig) -> AttackResult:
    """Run one named attack and return a perturbation that is feasible at ``cfg.eps``."""
    check_names([name])
    x = np.asarray(x, dtype=np.float64)
    start = time.perf_counter()
    if name in ("padam-ce", "padam-cos", "sea-jsd", "sea-mce", "sea-msl", "sea-bce"):
        out = run_max_damage(model, x, y, max_damage_config(name, cfg))
        delta, mp, diverged = out.perturbation, None, out.diverged
    else:
        algorithm = name.split("-", 1)[0]
        mp = run_min_pert(model, x, y, algorithm, min_pert_config(name, cfg))
        delta = clip_to_budget(mp, cfg.eps, x=x, mode=cfg.clip_mode)
        diverged = False
    runtime = time.perf_counter() - start
    return AttackResult(name, delta, model.predict(x + delta), runtime, mp, diverged)


__all__ = [
    "ATTACK_NAMES", "ATTACK_INDEX", "BatteryConfig", "AttackResult", "run_attack", "check_names",
    "UnknownAttackError", "MaxDamageConfig", "AttackOutcome", "padam_attack", "sea_attack",
    "pgd_attack", "MinPertConfig", "MinPertOutcome", "dag_attack", "almaprox_attack",
    "pdpgd_attack", "clip_to_budget", "scaled",
]
