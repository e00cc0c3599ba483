"""``unik`` command line: train, eval, probe, fuse, synth, params.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from unik.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from unik.data.io import parse_dataset
from unik.data.layout import LayoutError, load_layout
from unik.data.skeleton import DataError
from unik.data.synth import load_spec
from unik.metrics import ScoreError, compute_metrics, fuse_scores, read_scores, write_scores
from unik.net import count_params, linear_head_params
from unik.tensor.core import ConfigError, DimensionError
from unik.train import evaluate, linear_probe, load_config, prepare_split, synth, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3


def _print_metrics(m, prefix: str = "") -> None:
    print(f"{prefix}top1 {m.top1:.4f}")
    print(f"{prefix}top5 {m.top5:.4f}")
    print(f"{prefix}mean_per_class {m.mean_per_class:.4f}")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir:
        cfg.out_dir = args.out_dir

    def report(rec):
        print(f"epoch {rec.epoch} lr {rec.lr:.5g} loss {rec.train_loss:.4f} train_top1 {rec.train_top1:.4f}"
              + (f" val_top1 {rec.val_top1:.4f}" if rec.val_top1 is not None else ""), flush=True)

    result = train(cfg, progress=report)
    print(f"checkpoint {result.checkpoint_path}")
    print(f"best {result.best_checkpoint_path}")
    print(f"curve {result.curve_path}")
    if result.metrics is not None:
        _print_metrics(result.metrics, "val_")
    return EXIT_OK


def cmd_eval(args) -> int:
    layout = load_layout(args.layout)
    split = parse_dataset(args.data, layout)
    metrics, scores = evaluate(args.ckpt, split, layout, args.stream, args.batch_size, args.max_t)
    if args.scores_out:
        write_scores(args.scores_out, [s.id for s in split.sequences], scores, split.labels)
    _print_metrics(metrics)
    return EXIT_OK


def cmd_probe(args) -> int:
    layout = load_layout(args.layout)
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.config.V != layout.V:
        raise DataError(f"checkpoint expects {ckpt.config.V} joints, layout has {layout.V}")
    split = parse_dataset(args.data, layout)
    val = parse_dataset(args.val, layout) if args.val else None
    num_classes = max(split.num_classes, val.num_classes if val else 0)
    result = linear_probe(
        ckpt, prepare_split(split, layout, args.stream), num_classes, args.epochs,
        prepare_split(val, layout, args.stream) if val else None,
        lr0=args.lr, batch_size=args.batch_size, seed=args.seed,
    )
    print(f"trainable_params {result.trainable_params}")
    _print_metrics(result.metrics)
    if args.out:
        save_checkpoint(result.net, args.out, epoch=args.epochs, seed=args.seed)
        print(f"checkpoint {args.out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    ids_j, s_j, labels_j = read_scores(args.joint)
    ids_b, s_b, _ = read_scores(args.bone)
    ids, fused = fuse_scores(ids_j, s_j, ids_b, s_b)
    if args.out:
        write_scores(args.out, ids, fused / 2.0, labels_j if (labels_j >= 0).all() else None)
    if len(labels_j) and (labels_j >= 0).all():
        _print_metrics(compute_metrics(fused, labels_j, fused.shape[1]))
    else:
        for cid, row in zip(ids, fused):
            print(f"{cid} {int(np.argmax(row))}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_spec(args.spec)
    path = synth(spec, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = load_config(args.config)
    net_cfg = cfg.network_config(args.V, args.C_in, args.num_classes)
    counts = count_params(net_cfg)
    for name, n in counts.items():
        print(f"{name} {n}")
    print(f"probe_head {linear_head_params(net_cfg.feature_dim, net_cfg.num_classes)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unik", description="Skeleton action recognition toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from scratch, fine-tune or linear-probe")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--layout", default="unik17")
    e.add_argument("--stream", choices=("joint", "bone"), default="joint")
    e.add_argument("--scores-out")
    e.add_argument("--batch-size", type=int, default=16)
    e.add_argument("--max-t", type=int, default=1200)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("probe", help="train a linear head on frozen features")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--epochs", type=int, required=True)
    pr.add_argument("--val")
    pr.add_argument("--layout", default="unik17")
    pr.add_argument("--stream", choices=("joint", "bone"), default="joint")
    pr.add_argument("--lr", type=float, default=0.1)
    pr.add_argument("--batch-size", type=int, default=16)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", help="write backbone + probe head checkpoint here")
    pr.set_defaults(func=cmd_probe)

    f = sub.add_parser("fuse", help="sum joint and bone softmax scores")
    f.add_argument("--joint", required=True)
    f.add_argument("--bone", required=True)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fuse)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("params", help="parameter counts for a config")
    c.add_argument("--config", required=True)
    c.add_argument("--V", type=int, default=17)
    c.add_argument("--C-in", dest="C_in", type=int, default=2)
    c.add_argument("--num-classes", type=int, default=31)
    c.set_defaults(func=cmd_params)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(exc, (ConfigError, LayoutError, json.JSONDecodeError)):
        return EXIT_CONFIG
    return EXIT_DATA


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CheckpointError, ConfigError, LayoutError, DataError, ScoreError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        ckpt = getattr(args, "ckpt", None)
        if ckpt and Path(exc.filename or "") == Path(ckpt):
            return EXIT_CHECKPOINT
        return EXIT_CONFIG if exc.filename in (getattr(args, "config", None), getattr(args, "spec", None)) else EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
