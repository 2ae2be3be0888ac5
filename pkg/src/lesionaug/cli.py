"""Command-line entry point: ``lesionaug <subcommand> [--config F] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import load_config

COMMANDS = ("gen-data", "split", "train-baseline", "stratify", "train-gan", "synthesize",
            "train-augmented", "evaluate", "ensemble-evaluate", "run-all")


def _global_flags(p: argparse.ArgumentParser, defaults: bool) -> None:
    # subparsers repeat the flags so they may follow the subcommand too
    sup = None if defaults else argparse.SUPPRESS
    p.add_argument("--config", default=sup, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=sup, help="master seed")
    p.add_argument("--out", default=sup, help="run directory")
    p.add_argument("--set", action="append", default=sup, metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", default=sup)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lesionaug",
                                     description="Adversarial data augmentation for lesion segmentation")
    _global_flags(parser, defaults=True)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-data": "generate the procedural lesion corpus",
        "split": "resize to working resolution and split train / train-val",
        "train-baseline": "train the baseline segmenter",
        "stratify": "score training images and split simple / complex",
        "train-gan": "train the S-Model or C-Model generator",
        "synthesize": "cross-synthesize the additional training images",
        "train-augmented": "merge real and synthetic data and retrain from scratch",
        "evaluate": "single-model reports for baseline and augmented segmenters",
        "ensemble-evaluate": "top-k ensemble report for the augmented run",
        "run-all": "run every stage in order",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        _global_flags(sp, defaults=False)
        if name == "train-gan":
            sp.add_argument("--partition", choices=("S", "C"), required=True)
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.out is not None:
        out["out"] = args.out
    return out


def run(args) -> None:
    config = load_config(args.config, _overrides(args))
    config.validate()
    ws = pipeline.Workspace(config)
    cmd = args.command
    if cmd == "run-all":
        arts = pipeline.run_full_pipeline(config)
        print(arts.ensemble_report)
        return
    actions = {
        "gen-data": pipeline.stage_gen_data,
        "split": pipeline.stage_split,
        "train-baseline": pipeline.stage_train_baseline,
        "stratify": pipeline.stage_stratify,
        "train-gan": lambda w: pipeline.stage_train_gan(w, args.partition),
        "synthesize": pipeline.stage_synthesize,
        "evaluate": pipeline.stage_evaluate,
        "ensemble-evaluate": pipeline.stage_ensemble_evaluate,
    }
    if cmd == "train-augmented":
        pipeline.stage_augment(ws)
        result = pipeline.stage_train_augmented(ws)
    else:
        result = actions[cmd](ws)
    if result is not None:
        items = result.values() if isinstance(result, dict) else (
            result if isinstance(result, tuple) else (result,))
        for item in items:
            print(item)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        run(args)
    except pipeline.StageError as exc:
        print(f"error: stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: stage {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
