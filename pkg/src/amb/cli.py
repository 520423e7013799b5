"""``amb`` command line: train, eval, robustness, params, synth.

Exit codes: 0 ok, 2 configuration error, 3 data/checkpoint error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import archive
from .config import AMBConfig, ConfigError
from .model import AMBModel, build_freeze_mask, count_parameters, load_weights, parameter_shapes, save_weights
from .pipeline import (DataError, generate_synthetic, load_jsonl, prepare, resolve_vocab, save_jsonl,
                       split_synthetic)
from .robustness import DEFAULT_RATES, KINDS, robustness_sweep, write_sweep_csv
from .tokenizer import VocabularyError
from .trainer import MetricsReport, NumericError, evaluate, train, write_history

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
CHECKPOINT_NAME, HISTORY_NAME, CONFIG_NAME, SWEEP_NAME = "best.amb", "history.csv", "config.json", "robustness.csv"

log = logging.getLogger("amb")


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _overrides(args):
    values = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    if getattr(args, "mode", None):
        values["mode"] = args.mode
    if getattr(args, "synthetic", None) is not None:
        values["synthetic"] = args.synthetic
    if args.seed is not None:
        values["seed"] = args.seed
    return values


def resolve_config(args, base=None):
    """File (or checkpoint) values, then --set/--mode/--seed; AMB_SEED only fills a missing seed."""
    overrides = _overrides(args)
    file_values = {}
    if args.config:
        file_values = AMBConfig.load(args.config).to_dict()
    elif base is not None:
        file_values = base.to_dict()
    if "seed" not in overrides and "seed" not in file_values and os.environ.get("AMB_SEED"):
        overrides["seed"] = os.environ["AMB_SEED"]
    return AMBConfig.from_mapping({**file_values, **overrides})


def _load_samples(path, config):
    if not path or not Path(path).exists():
        raise CommandError(EXIT_DATA, f"data file not found: {path!r}")
    return load_jsonl(path, config)


def training_data(config):
    if config.synthetic:
        return split_synthetic(generate_synthetic(config.synthetic, config.seed, config))
    if not config.train_data:
        raise CommandError(EXIT_DATA, "no data: pass --synthetic N or set train_data/dev_data")
    return _load_samples(config.train_data, config), _load_samples(config.dev_data, config)


def eval_data(args, config):
    if args.data:
        return _load_samples(args.data, config)
    if not config.synthetic:
        return _load_samples(config.dev_data, config)
    train_part, dev_part = training_data(config)
    return {"train": train_part, "dev": dev_part, "all": train_part + dev_part}[args.split]


def _load_checkpoint(args):
    if not args.checkpoint or not Path(args.checkpoint).exists():
        raise CommandError(EXIT_DATA, f"checkpoint not found: {args.checkpoint!r}")
    _, meta = archive.load_archive(args.checkpoint)
    base = AMBConfig.from_mapping(json.loads(meta["config"])) if "config" in meta else None
    config = resolve_config(args, base)
    config, vocab = resolve_vocab(config)
    params, config = load_weights(args.checkpoint, config)
    return AMBModel(config, params), config, vocab


# ----------------------------------------------------------------- commands

def cmd_train(args):
    config, vocab = resolve_vocab(resolve_config(args))
    train_samples, dev_samples = training_data(config)
    if not train_samples or not dev_samples:
        raise CommandError(EXIT_DATA, "train and dev sets must both be non-empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = AMBModel(config)
    result = train(config, model, prepare(train_samples, vocab, config.max_len),
                   prepare(dev_samples, vocab, config.max_len), max_steps=args.max_steps)
    save_weights(model.params, out / CHECKPOINT_NAME, config)
    write_history(result.history, out / HISTORY_NAME)
    config.save(out / CONFIG_NAME)
    print(f"best epoch {result.best_epoch} dev_mae {result.best_dev_mae:.6f}; wrote {out}")
    return 0


def cmd_eval(args):
    model, config, vocab = _load_checkpoint(args)
    examples = prepare(eval_data(args, config), vocab, config.max_len)
    if not examples:
        raise CommandError(EXIT_DATA, "evaluation set is empty")
    report = evaluate(model, examples, config.batch_size, args.acc2_exclude_zero)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(MetricsReport.FIELDS)
    w.writerow(report.row())
    return 0


def cmd_robustness(args):
    model, config, vocab = _load_checkpoint(args)
    examples = prepare(eval_data(args, config), vocab, config.max_len)
    if not examples:
        raise CommandError(EXIT_DATA, "evaluation set is empty")
    try:
        rates = [float(r) for r in args.rates.split(",")] if args.rates else list(DEFAULT_RATES)
        kinds = args.kinds.split(",") if args.kinds else list(KINDS)
    except ValueError as exc:
        raise ConfigError(f"bad --rates value {args.rates!r}") from exc
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise ConfigError(f"unknown corruption kinds {bad}; valid: {', '.join(KINDS)}")
    results = robustness_sweep(model, examples, vocab, kinds, rates, args.runs, config.seed, args.sigma,
                               config.batch_size)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(results, out / SWEEP_NAME)
    write_sweep_csv(results, sys.stdout)
    return 0


def cmd_params(args):
    if args.checkpoint:
        model, config, _ = _load_checkpoint(args)
        counts = count_parameters(model.params)
    else:
        config = resolve_config(args)
        if config.preset == "toy" or config.vocab:
            config, _ = resolve_vocab(config)
        shapes = parameter_shapes(config)
        counts = count_parameters(shapes, build_freeze_mask(config, shapes))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["group", "trainable", "frozen", "total"])
    for group, c in counts["groups"].items():
        w.writerow([group, c["trainable"], c["frozen"], c["total"]])
    w.writerow(["ALL", counts["trainable"], counts["frozen"], counts["total"]])
    print(f"# mode={config.mode} trainable={counts['trainable'] / 1e6:.3f}M", file=sys.stderr)
    return 0


def cmd_synth(args):
    config = resolve_config(args)
    n = config.synthetic or 1000
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_part, dev_part = split_synthetic(generate_synthetic(n, config.seed, config))
    save_jsonl(train_part, out / "train.jsonl")
    save_jsonl(dev_part, out / "dev.jsonl")
    resolve_vocab(config)[1].save(out / "vocab.txt")
    print(f"wrote {len(train_part)} train / {len(dev_part)} dev samples to {out}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--set", action="append", metavar="K=V", help="override a config key (repeatable)")
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (falls back to $AMB_SEED)")
    common.add_argument("--mode", help="adapters | finetune | text_only | no_text")
    common.add_argument("--synthetic", type=int, metavar="N", help="use an N-sample synthetic corpus")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--checkpoint", help="tensor archive written by train")
    data.add_argument("--data", help="JSONL evaluation file")
    data.add_argument("--split", choices=("train", "dev", "all"), default="dev",
                      help="which synthetic split to evaluate")

    parser = argparse.ArgumentParser(prog="amb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train and write checkpoint/history/config")
    p.add_argument("--max-steps", type=int, help="stop after this many optimiser steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common, data], help="print metrics as CSV")
    p.add_argument("--acc2-exclude-zero", action="store_true", help="Acc-2/F1 over non-zero labels only")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", parents=[common, data], help="corruption sweep CSV")
    p.add_argument("--rates", help="comma-separated corruption rates")
    p.add_argument("--kinds", help=f"comma-separated subset of {','.join(KINDS)}")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--sigma", type=float, default=1.0, help="std of the multiplicative visual noise")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("params", parents=[common], help="trainable/frozen parameter counts")
    p.add_argument("--checkpoint", help="count an existing archive instead of the config")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic JSONL corpus and vocab")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, VocabularyError, archive.ArchiveError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
