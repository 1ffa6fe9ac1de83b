"""Command-line entry point.

    segrobust gen-data  CONFIG --out DIR          synthetic dataset -> DIR/train, DIR/test
    segrobust train     CONFIG --dataset DIR --out FILE.sgmd
    segrobust attack    CONFIG --model FILE --dataset DIR --out DIR
    segrobust evaluate  CONFIG --outcomes DIR --out DIR
    segrobust report    CONFIG --outcomes DIR --out DIR

Each subcommand reads one JSON config; ``--seed`` and ``--fidelity``
override the matching config entries. Exit codes: 0 success, 1 usage,
2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .attacks import ATTACK_NAMES, BatteryConfig, UnknownAttackError, check_names
from .data import (DataError, FormatError, GenerationError, SynthSpec, gen_synthetic_dataset,
                   load_dataset, save_dataset, store_perturbation)
from .harness import TrainConfig, adversarial_train, evaluate_image, summarize
from .models import ToyModelSpec, load_checkpoint, save_checkpoint
from .reports import load_report, record_to_json, write_plot_data, write_report

log = logging.getLogger("segrobust")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing config file: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    return cfg


def _build(cls, values: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown {what} keys: {', '.join(unknown)}")
    values = {k: tuple(map(tuple, v)) if k == "colors" else tuple(v) if isinstance(v, list) else v
              for k, v in values.items()}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {what}: {exc}") from exc


def _path(args, cfg, key, required=True):
    value = getattr(args, key, None) or cfg.get(key)
    if value is None and required:
        raise UsageError(f"no {key} given (use --{key} or the '{key}' config key)")
    return None if value is None else Path(value)


def cmd_gen_data(args, cfg):
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = _build(SynthSpec, cfg, "gen-data config")
    train, test = gen_synthetic_dataset(spec)
    out = Path(args.out)
    save_dataset(train, out / "train")
    save_dataset(test, out / "test")
    log.info("wrote %d train and %d test images to %s", len(train), len(test), out)


def cmd_train(args, cfg):
    dataset = load_dataset(_path(args, cfg, "dataset"))
    mcfg = dict(cfg.get("model", {}))
    tcfg = dict(cfg.get("train", {}))
    if args.seed is not None:
        mcfg["seed"] = args.seed
        tcfg["seed"] = args.seed
    mcfg.setdefault("classes", dataset.classes)
    spec = _build(ToyModelSpec, mcfg, "model config")
    train_cfg = _build(TrainConfig, tcfg, "train config")
    history = []
    model = adversarial_train(spec, dataset, train_cfg, history=history)
    if history and len(history) < train_cfg.epochs:
        raise NumericFailure("training diverged (non-finite loss)")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    log.info("saved checkpoint to %s", out)


def cmd_attack(args, cfg):
    model = load_checkpoint(_path(args, cfg, "model"))
    dataset = load_dataset(_path(args, cfg, "dataset"))
    names = cfg.get("attacks", list(ATTACK_NAMES))
    check_names(names)
    bcfg = {k: v for k, v in cfg.items() if k not in ("attacks", "model", "dataset",
                                                     "save_perturbations")}
    if args.seed is not None:
        bcfg["seed"] = args.seed
    if args.fidelity is not None:
        bcfg["fidelity"] = args.fidelity
    # min-pert attacks ignore background pixels unless the config says otherwise
    bcfg.setdefault("minpert_background_id", dataset.background_id)
    battery = _build(BatteryConfig, bcfg, "attack config")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_deltas = bool(cfg.get("save_perturbations", True))
    records = []
    for image_id, x, y in dataset:
        deltas = {} if save_deltas else None
        rec = evaluate_image(model, image_id, x, y, names, battery, dataset.classes,
                             dataset.background_id, perturbations=deltas)
        records.append(rec)
        (out / f"{image_id}.json").write_text(
            json.dumps(record_to_json(rec), indent=1, sort_keys=True) + "\n")
        for name, delta in (deltas or {}).items():
            store_perturbation(out / f"{image_id}__{name}.sgpd", delta)
    index = {"attack_names": names, "classes": dataset.classes,
             "image_ids": [r.image_id for r in records]}
    (out / "outcomes.json").write_text(json.dumps(index, indent=2) + "\n")
    failures = summarize(records, names)[0]["failures"]
    if failures:
        log.warning("attack failures: %s", ", ".join(failures))


def cmd_evaluate(args, cfg):
    report = load_report(_path(args, cfg, "outcomes"))
    write_report(report, Path(args.out), timings=args.timings or cfg.get("timings", False))
    log.info("wrote report to %s", args.out)


def cmd_report(args, cfg):
    report = load_report(_path(args, cfg, "outcomes"))
    write_plot_data(report, Path(args.out))
    log.info("wrote plot data to %s", args.out)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segrobust", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="JSON config file")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--fidelity", type=float)
        if name in ("train", "attack"):
            p.add_argument("--dataset")
        if name == "attack":
            p.add_argument("--model")
        if name in ("evaluate", "report"):
            p.add_argument("--outcomes", help="outcomes directory written by `attack`")
        if name == "evaluate":
            p.add_argument("--timings", action="store_true",
                           help="also write attack runtimes to timings.json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except UnknownAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, GenerationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, ArithmeticError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
