"""Command-line entry points.

    mmctr gen-data  --config C --out DIR
    mmctr train     --config C --data DIR --out RUN
    mmctr eval      --checkpoint P --data DIR --split S
    mmctr predict   --checkpoint P --input samples.tsv --out scores.tsv
    mmctr gradcheck --config C [--eps E] [--tol T] [--dtype float64|float32]
    mmctr grid      --config C [--grid G] --data DIR --out RUN [--cartesian]

Every command exits nonzero on failure. The --set key=value flag overrides
individual config keys without editing the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .autograd import Graph, ShapeError, full_grad_check
from .checkpoint import (CheckpointError, load_checkpoint, model_from_checkpoint,
                         save_checkpoint)
from .config import (ConfigError, DEFAULT_GRID, TrainConfig, apply_overrides,
                     parse_config, parse_grid)
from .data import (DataError, SampleSet, batches, gen_synthetic, load_items,
                   load_samples, save_items, save_samples, validate_references)
from .head import bce_with_logits
from .metrics import UndefinedMetricError
from .model import CtrModel, side_vocab_sizes
from .training import (DivergenceError, evaluate, format_grid_table, grid_search,
                       train)

_SPLIT_FILES = {"train": "train_samples.tsv", "val": "val_samples.tsv",
                "test": "test_samples.tsv"}


def _load_config(args) -> TrainConfig:
    cfg = parse_config(args.config) if args.config else TrainConfig().validate()
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    return cfg


def cmd_gen_data(args):
    cfg = _load_config(args)
    total = cfg.n_train + cfg.n_val + cfg.n_test
    items, samples, _ = gen_synthetic(
        seed=cfg.seed, n_users=cfg.n_users, n_items=cfg.n_items, d_mm=cfg.d_mm,
        n_positions=cfg.N, n_samples=total, positive_rate_target=cfg.positive_rate,
        alpha=cfg.gen_alpha, beta=cfg.gen_beta)
    os.makedirs(args.out, exist_ok=True)
    save_items(items, os.path.join(args.out, "items.tsv"))
    splits = {"train": samples[:cfg.n_train],
              "val": samples[cfg.n_train:cfg.n_train + cfg.n_val],
              "test": samples[cfg.n_train + cfg.n_val:]}
    for split, chunk in splits.items():
        out = SampleSet(n_positions=cfg.N, n_side=2, samples=chunk)
        save_samples(out, os.path.join(args.out, _SPLIT_FILES[split]))
    print(f"wrote {len(items)} items and "
          f"{'/'.join(str(len(v)) for v in splits.values())} "
          f"train/val/test samples to {args.out}")
    return 0


def _load_split(data_dir, split):
    path = os.path.join(data_dir, _SPLIT_FILES[split])
    return load_samples(path)


def cmd_train(args):
    cfg = _load_config(args)
    items = load_items(os.path.join(args.data, "items.tsv"))
    train_set = _load_split(args.data, "train")
    val_set = _load_split(args.data, "val")
    validate_references(train_set, items)
    validate_references(val_set, items)
    result = train(cfg, items, train_set, val_set, run_dir=args.out)
    meta = {"best_epoch": result.best_epoch,
            "best_val_auc": result.best_val_auc,
            "epochs_run": result.epochs_run}
    ckpt_path = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(ckpt_path, cfg, result.model.state_tensors(), meta=meta)
    print(json.dumps({"checkpoint": ckpt_path, **meta}))
    return 0


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    sample_set = _load_split(args.data, args.split)
    if sample_set.n_positions != model.config.N:
        raise ConfigError(f"split has N={sample_set.n_positions} but checkpoint "
                          f"was trained with N={model.config.N}")
    result = evaluate(model, sample_set)
    print(result.json_line(args.split, int(ckpt.meta.get("best_epoch", 0))))
    return 0


def cmd_predict(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    sample_set = load_samples(args.input)
    if sample_set.n_positions != model.config.N:
        raise ConfigError(f"input has N={sample_set.n_positions} but checkpoint "
                          f"was trained with N={model.config.N}")
    with open(args.out, "w", encoding="utf-8") as f:
        index = 0
        for batch in batches(sample_set, model.config.batch_size):
            for p in model.predict(batch):
                f.write(f"{index}\t{float(p)!r}\n")
                index += 1
    print(f"wrote {index} scores to {args.out}")
    return 0


def cmd_gradcheck(args):
    cfg = _load_config(args)
    dtype = np.float64 if args.dtype == "float64" else np.float32
    eps = args.eps if args.eps is not None else (1e-4 if dtype == np.float64
                                                 else 1e-3)
    items, samples, _ = gen_synthetic(
        seed=cfg.seed, n_users=6, n_items=10, d_mm=cfg.d_mm, n_positions=cfg.N,
        n_samples=args.batch, positive_rate_target=0.5)
    sample_set = SampleSet(n_positions=cfg.N, n_side=2, samples=samples)
    vocab = side_vocab_sizes([sample_set], cfg.n_side_features)
    model = CtrModel.from_items(cfg, items, vocab, dtype=dtype)
    batch = next(batches(sample_set, args.batch))

    def loss_fn():
        return bce_with_logits(model.forward(batch, training=False), batch.labels)

    # pad rows are structurally frozen, not trainable coordinates; skip them
    masks = {name: ~mask for name, mask in model.frozen_masks().items()}
    worst, report = full_grad_check(loss_fn, model.named_params(), eps=eps,
                                    masks=masks)
    for name in sorted(report, key=report.get, reverse=True)[:5]:
        print(f"{name}\t{report[name]:.3e}")
    print(f"max relative error: {worst:.3e} (tolerance {args.tol:g})")
    return 0 if worst < args.tol else 1


def cmd_grid(args):
    cfg = _load_config(args)
    grid = parse_grid(args.grid) if args.grid else dict(DEFAULT_GRID)
    items = load_items(os.path.join(args.data, "items.tsv"))
    train_set = _load_split(args.data, "train")
    val_set = _load_split(args.data, "val")
    mode = "cartesian" if args.cartesian else "one_factor"
    results = grid_search(grid, cfg, items, train_set, val_set, mode=mode)
    table = format_grid_table(results)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "grid.tsv")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(table)
    print(table, end="")
    print(f"wrote {len(results)} trials to {out_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="mmctr",
                                     description="Multimodal sequential CTR engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required,
                       help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and keep the best checkpoint")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=sorted(_SPLIT_FILES), default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="score a samples file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="samples.tsv to score")
    p.add_argument("--out", required=True, help="output scores.tsv")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("gradcheck",
                       help="compare reverse-mode gradients to finite differences")
    common(p)
    p.add_argument("--eps", type=float, default=None,
                   help="finite-difference step (default per dtype)")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--batch", type=int, default=8)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("grid", help="hyperparameter sweep")
    common(p)
    p.add_argument("--grid", help="grid file; defaults to the built-in grids")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cartesian", action="store_true",
                   help="full cartesian product instead of one factor at a time")
    p.set_defaults(fn=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataError, CheckpointError, DivergenceError,
            UndefinedMetricError, ShapeError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
