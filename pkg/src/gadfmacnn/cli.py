"""Command-line driver: ``gadfmacnn <command> --config run.yaml [--set key=value ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import DiagError

COMMANDS = ("synth", "encode", "train-gan", "augment", "train-classifier", "evaluate", "report", "all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gadfmacnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="YAML pipeline config (defaults if omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set train.epochs=20")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("train-classifier", "evaluate", "report", "all"):
            p.add_argument("--no-augment", action="store_true",
                           help="train/evaluate on real images only (ablation)")
    return parser


def _run(args) -> object:
    cfg = load_config(args.config, args.overrides)
    aug = not getattr(args, "no_augment", False)
    cmd = args.command
    steps = {
        "synth": lambda: pipeline.cmd_synth(cfg),
        "encode": lambda: pipeline.cmd_encode(cfg)["counts"],
        "train-gan": lambda: pipeline.cmd_train_gan(cfg),
        "augment": lambda: pipeline.cmd_augment(cfg),
        "train-classifier": lambda: pipeline.cmd_train_classifier(cfg, aug),
        "evaluate": lambda: {"accuracy": pipeline.cmd_evaluate(cfg, aug).accuracy},
        "report": lambda: pipeline.cmd_report(cfg, aug),
    }
    if cmd == "all":
        order = ["encode"] + (["train-gan", "augment"] if aug else []) + ["train-classifier", "evaluate", "report"]
        result = None
        for name in order:
            with pipeline.command_log(cfg, name):
                result = steps[name]()
        return result
    with pipeline.command_log(cfg, cmd):
        return steps[cmd]()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger("gadfmacnn").addHandler(console)
    try:
        result = _run(args)
    except DiagError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("error[interrupted]", file=sys.stderr)
        return 130
    finally:
        logging.getLogger("gadfmacnn").removeHandler(console)
    if result is not None:
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
