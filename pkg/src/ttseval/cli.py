"""Command-line entry point.

    ttseval <command> [--config run.cfg] [--key value ...]

Every RunConfig field is also a `--flag`; flags override the config file.
Exit codes: 0 success/pass, 1 gate failure, 2 operational error.
TTSEVAL_LOG sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from typing import List, Optional

from ttseval import pipeline as pl
from ttseval.errors import TtsEvalError
from ttseval.metrics import format_report

COMMANDS = ("standardize", "featurize", "augment", "pairs", "train-sbs", "train-mos", "evaluate", "gate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttseval", description="Automated TTS quality evaluation")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    for f in fields(pl.RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = f.type if isinstance(f.type, str) else f.type.__name__
        if kind == "bool":
            parser.add_argument(flag, dest=f.name, default=None, type=lambda s: pl._coerce("bool", s),
                                metavar="BOOL")
        else:
            parser.add_argument(flag, dest=f.name, default=None, type={"int": int, "float": float}.get(kind, str))
    return parser


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {f.name: getattr(args, f.name) for f in fields(pl.RunConfig)}
    cfg = pl.make_config(args.config, **overrides)
    cmd = args.command

    if cmd == "standardize":
        _print_json(pl.cmd_standardize(cfg))
    elif cmd == "featurize":
        print(pl.cmd_featurize(cfg))
    elif cmd == "augment":
        rows, errors = pl.cmd_augment(cfg)
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        print(f"{len(rows)} augmented clip(s) written to {os.path.join(cfg.out_dir, 'augmented')}")
        return pl.EXIT_ERROR if errors else pl.EXIT_PASS
    elif cmd == "pairs":
        train, test = pl.cmd_pairs(cfg)
        print(f"{len(train)} train pairs, {len(test)} test pairs")
    elif cmd == "train-sbs":
        _print_json(pl.cmd_pipeline_train_sbs(cfg))
    elif cmd == "train-mos":
        report = pl.cmd_pipeline_train_mos(cfg)
        print(format_report(report))
        _print_json(report)
    elif cmd == "evaluate":
        report = pl.cmd_evaluate(cfg)
        print(format_report(report))
        _print_json(report)
    elif cmd == "gate":
        res = pl.cmd_gate(cfg)
        for clip, value in sorted(res.per_clip.items()):
            print(f"{clip}\t{value:.4f}")
        verdict = "PASS" if res.passed else "FAIL"
        print(f"{verdict} {res.mode}: {res.statistic:.4f} vs threshold {res.threshold:.4f} (n={res.n})")
        return pl.EXIT_PASS if res.passed else pl.EXIT_FAIL
    return pl.EXIT_PASS


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("TTSEVAL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(argv)
    except (TtsEvalError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pl.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
