"""Command line: ``python -m dialkit <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import DialkitError
from .harness import config as C
from .harness import runner, synth
from .harness.report import emit_report, metric_table


def _load(args, subtask=None):
    overrides = {"seed": args.seed, "out": args.out}
    if subtask or getattr(args, "subtask", None):
        overrides["subtask"] = subtask or args.subtask
    if args.config:
        return C.load_config(args.config, **overrides)
    return C.RunConfig.for_subtask(overrides.pop("subtask", "s1"),
                                   **{k: v for k, v in overrides.items() if v is not None})


def _common(p, subtask=True):
    p.add_argument("--config", help="flat key=value run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory")
    if subtask:
        p.add_argument("--subtask", choices=C.SUBTASKS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dialkit", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = ap.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("pretrain", help="masked-token + next-sentence pretraining"), subtask=False)
    _common(sub.add_parser("train", help="train, select on validation, evaluate on test"))
    p = sub.add_parser("eval", help="evaluate a finished run directory")
    _common(p)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    _common(sub.add_parser("sweep-threshold", help="pick the no-answer threshold on validation"))
    p = sub.add_parser("disentangle", help="link and cluster a channel file with an s4 run")
    _common(p)
    p.add_argument("--input", required=True, help="channel-record JSONL")
    _common(sub.add_parser("ensemble", help="train several seeds and combine them"))
    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("kind", choices=synth.KINDS)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--overfit", action="store_true", help="valid and test repeat the training split")
    p = sub.add_parser("acceptance", help="run acceptance experiments (all by default)")
    p.add_argument("names", nargs="*", metavar="AC-n")
    p.add_argument("--out", help="keep experiment files here instead of a temporary directory")
    return ap


def _run_dir(args, cfg):
    return args.out or cfg.out


def _acceptance(args) -> int:
    from .harness import acceptance

    failed = 0
    for name in args.names or list(acceptance.EXPERIMENTS):
        workdir = f"{args.out}/{name.lower()}" if args.out else None
        outcome = acceptance.run_experiment(name, workdir)
        print(outcome.line(), flush=True)
        failed += not outcome.passed
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        if args.command == "synth":
            paths = synth.make_synthetic(args.kind, args.size, args.seed, args.out, args.overfit)
            print(json.dumps(paths, indent=2))
            return 0
        if args.command == "acceptance":
            return _acceptance(args)
        cfg = _load(args, "pretrain" if args.command == "pretrain" else None)
        if args.command in ("pretrain", "train"):
            report = runner.run(cfg)
            sys.stdout.write(metric_table(cfg.subtask, report["test"]))
        elif args.command == "ensemble":
            report = runner.run_ensemble(cfg)
            sys.stdout.write(metric_table(cfg.subtask, report["test"]))
        elif args.command == "eval":
            record = runner.evaluate_run(_run_dir(args, cfg), cfg if args.config else None, args.split)
            sys.stdout.write(metric_table(cfg.subtask, record))
        elif args.command == "sweep-threshold":
            result = runner.sweep(_run_dir(args, cfg), cfg if args.config else None)
            emit_report({"subtask": cfg.subtask, "seed": cfg.seed, "test": result["valid"],
                         "threshold": result["threshold"]}, _run_dir(args, cfg) + "/sweep")
            print(f"threshold {result['threshold']:.2f}")
        elif args.command == "disentangle":
            run_dir = _run_dir(args, cfg)
            record = runner.disentangle(run_dir, args.input, run_dir + "/disentangled",
                                        cfg if args.config else None)
            if record:
                sys.stdout.write(metric_table("s4", record))
    except DialkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
