"""Command-line entry point: ``crosscbr {train,evaluate,diagnose,synth,inspect}``.

Exit codes: 0 success, 2 configuration error, 3 dataset error,
4 numerical abort, 5 checkpoint/dataset dimension mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import __version__, kernels
from .config import ConfigError, add_flags, load_file, resolve, to_dict
from .dataset import (PUBLIC_STATS, DatasetError, generate_synthetic, load_dataset,
                      load_split, parse_synthetic_spec, split, write_dataset, write_split)
from .encoder import ModelConfig, load_checkpoint
from .evaluator import alignment_dispersion, evaluate_views
from .trainer import Model, NumericalError, train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_MISMATCH = 2, 3, 4, 5

log = logging.getLogger("crosscbr")


class DimensionMismatch(Exception):
    pass


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def _overrides(args) -> dict:
    return {k: v for k, v in vars(args).items() if "." in k}


def _load_training_data(data_cfg, seed):
    if data_cfg.synthetic:
        spec = parse_synthetic_spec(data_cfg.synthetic, seed)
        dataset = generate_synthetic(**spec)
    elif data_cfg.root:
        dataset = load_dataset(data_cfg.root, data_cfg.name)
    else:
        raise ConfigError("either --data or --synthetic is required")
    return dataset


def _has_split_files(root):
    return all(os.path.isfile(os.path.join(root, f)) for f in ("train.txt", "tune.txt", "test.txt"))


def cmd_train(args) -> int:
    """Train on ``--synthetic`` data or a dataset directory.

    A directory that already holds ``train.txt``/``tune.txt``/``test.txt``
    is trained on that split; otherwise the pairs are split with the seed.
    """
    try:
        trainer_cfg, data_cfg = resolve(load_file(args.config), _overrides(args))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    try:
        if data_cfg.root and not data_cfg.synthetic and _has_split_files(data_cfg.root):
            sp = load_split(data_cfg.root)
            dataset = sp.base
        else:
            dataset = _load_training_data(data_cfg, trainer_cfg.seed)
            sp = split(dataset, data_cfg.split, seed=trainer_cfg.seed)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DatasetError, ValueError) as exc:
        return _fail(EXIT_DATA, exc)

    run_dir = args.out or os.path.join(
        args.runs_root, f"{time.strftime('%Y%m%d-%H%M%S')}-{args.tag}")
    os.makedirs(run_dir, exist_ok=True)
    data_dir = os.path.join(run_dir, "dataset")
    write_split(sp, data_dir)
    paths = {
        "log": os.path.join(run_dir, "train_log.jsonl"),
        "best": os.path.join(run_dir, "best.ckpt"),
        "last": os.path.join(run_dir, "last.ckpt"),
        "dataset": data_dir,
        "test_report": os.path.join(run_dir, "test_metrics.json"),
        "test_table": os.path.join(run_dir, "test_metrics.txt"),
    }
    manifest = {
        "config": to_dict(trainer_cfg, data_cfg),
        "dataset": {"name": dataset.name, "checksum": dataset.checksum(), **dataset.stats()},
        "seed": trainer_cfg.seed,
        "paths": paths,
        "version": __version__,
        "backend": kernels.BACKEND,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    try:
        result = train(sp, trainer_cfg, log_path=paths["log"], checkpoint_dir=run_dir,
                       eval_ks=data_cfg.eval_ks)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, f"{exc} {json.dumps(exc.diagnostics, default=str)}")

    model = Model(sp, trainer_cfg.model)
    report = evaluate_views(model.forward(result.state, augment=False), sp, "test",
                            data_cfg.eval_ks)
    with open(paths["test_report"], "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(paths["test_table"], "w", encoding="utf-8") as fh:
        fh.write(report.to_table() + "\n")
    print(f"run directory: {run_dir}")
    print(f"best epoch: {result.best_epoch}  validation ndcg@20: {result.best_metric:.6f}")
    print(report.to_table())
    return 0


def _restore(args):
    """Load checkpoint + split and build a model matching both."""
    state, epoch, _, header = load_checkpoint(args.checkpoint)
    sp = load_split(args.data)
    base = sp.base
    M, N, O, _ = state.shape
    if (M, N, O) != (base.num_users, base.num_bundles, base.num_items):
        raise DimensionMismatch(
            f"checkpoint has (M, N, O) = {(M, N, O)} but dataset has "
            f"{(base.num_users, base.num_bundles, base.num_items)}")
    meta = header.get("meta", {})
    layers = args.layers if args.layers is not None else meta.get("layers", 2)
    cfg = ModelConfig(dim=state.d, layers=layers,
                      self_connections=meta.get("self_connections", False),
                      bundle_bundle=meta.get("bundle_bundle", False))
    model = Model(sp, cfg)
    return model, state, sp


def _run_restore(args, body):
    try:
        model, state, sp = _restore(args)
    except DimensionMismatch as exc:
        return _fail(EXIT_MISMATCH, exc)
    except (DatasetError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, exc)
    return body(model, state, sp)


def cmd_evaluate(args) -> int:
    try:
        ks = [int(k) for k in args.k.split(",")]
        if any(k <= 0 for k in ks):
            raise ValueError
    except ValueError:
        return _fail(EXIT_CONFIG, f"invalid --k {args.k!r}")
    views = ("bundle", "item", "both") if args.view == "all" else (args.view,)

    def body(model, state, sp):
        reps = model.forward(state, augment=False)
        report = evaluate_views(reps, sp, args.target, ks, views=views)
        print(report.to_table())
        if args.json:
            with open(args.json, "w", encoding="utf-8") as fh:
                fh.write(report.to_json() + "\n")
        if args.csv:
            with open(args.csv, "w", encoding="utf-8") as fh:
                fh.write(report.to_csv())
        return 0

    return _run_restore(args, body)


def cmd_diagnose(args) -> int:
    if 0 < args.sample < 2 or args.sample < 0:
        return _fail(EXIT_CONFIG, "--sample must be 0 (all pairs) or >= 2")

    def body(model, state, sp):
        reps = model.forward(state, augment=False)
        report = alignment_dispersion(reps, args.sample, args.seed, skip_zero=True)
        print(report.to_json())
        print(report.to_table())
        if args.json:
            with open(args.json, "w", encoding="utf-8") as fh:
                fh.write(report.to_json() + "\n")
        return 0

    return _run_restore(args, body)


def cmd_synth(args) -> int:
    try:
        spec = parse_synthetic_spec(args.spec, args.seed)
        dataset = generate_synthetic(**spec)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, exc)
    if args.split:
        write_split(split(dataset, (0.7, 0.1, 0.2), seed=args.seed), args.out)
    else:
        write_dataset(dataset, args.out)
    print(json.dumps(dataset.stats(), sort_keys=True))
    return 0


def cmd_inspect(args) -> int:
    try:
        dataset = load_dataset(args.data, args.name)
    except DatasetError as exc:
        return _fail(EXIT_DATA, exc)
    stats = dataset.stats()
    ref = PUBLIC_STATS.get(args.name or dataset.name)
    keys = ("users", "bundles", "items", "user_item", "user_bundle")
    print(f"{'statistic':<22}{'value':>12}" + (f"{'reference':>12}" if ref else ""))
    for i, key in enumerate(keys):
        line = f"{key:<22}{stats[key]:>12}"
        if ref:
            line += f"{ref[i]:>12}" + ("" if ref[i] == stats[key] else "  MISMATCH")
        print(line)
    print(f"{'bundle_item':<22}{stats['bundle_item']:>12}")
    print(f"{'avg_items_per_bundle':<22}{stats['avg_items_per_bundle']:>12.2f}")
    if ref and any(ref[i] != stats[k] for i, k in enumerate(keys)):
        return EXIT_DATA
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crosscbr", description="Train, evaluate and inspect cross-view bundle recommenders.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and evaluate it on the test split")
    p.add_argument("config", nargs="?", default=None, help="TOML config file")
    add_flags(p)
    p.add_argument("--out", default=None, help="run directory (default runs/<timestamp>-<tag>)")
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--tag", default="run")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("evaluate", cmd_evaluate, "ranking metrics of a checkpoint"),
                                 ("diagnose", cmd_diagnose, "alignment/dispersion diagnostics")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="dataset directory with split files")
        p.add_argument("--layers", type=int, default=None,
                       help="propagation depth (default: from checkpoint)")
        p.add_argument("--json", default=None, help="also write the report as JSON")
        if name == "evaluate":
            p.add_argument("--k", default="20,40")
            p.add_argument("--view", choices=("bundle", "item", "both", "all"), default="both")
            p.add_argument("--target", choices=("validation", "test"), default="test")
            p.add_argument("--csv", default=None)
        else:
            p.add_argument("--sample", type=int, default=100_000,
                           help="pairs sampled for dispersion; 0 = all pairs")
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="generate a planted-community dataset")
    p.add_argument("spec", help="users,bundles,items,blocks,noise[,seed]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--split", action="store_true", help="also write 70/10/20 split files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="dataset statistics, compared to public references")
    p.add_argument("data")
    p.add_argument("--name", default="")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
