"""Command-line surface: prepare, inspect, train, evaluate, infer.

Settings resolve as defaults < config file < flags; the fully resolved
configuration is printed (and written next to outputs) for reproducibility.
The config file is line-oriented `key = value` text.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import data, metrics, optim, train
from .errors import PednetError
from .models import (CLASS_NAMES, build_model, registry_lookup)

_DEFAULTS = {
    "seed": 0,
    "batch_size": 8,
    "epochs": 70,
    "epochs_phase2": 30,
    "patience": 10,
    "balance_target": 5000,
    "rotation_deg": 15.0,
    "shift_frac": 0.10,
    "shear_deg": 10.0,
    "zoom_frac": 0.10,
    "flip_prob": 0.5,
}


def parse_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PednetError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
    return values


def resolve_config(args) -> dict:
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for key, raw in parse_config_file(args.config).items():
            if key in cfg:
                cfg[key] = type(_DEFAULTS[key])(raw)
            else:
                cfg[key] = raw
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _print_config(cfg: dict):
    for key in sorted(cfg):
        print(f"config {key} = {cfg[key]}")


def _aug_ranges(cfg) -> data.AugmentRanges:
    return data.AugmentRanges(
        rotation_deg=cfg["rotation_deg"], shift_frac=cfg["shift_frac"],
        shear_deg=cfg["shear_deg"], zoom_frac=cfg["zoom_frac"],
        flip_prob=cfg["flip_prob"])


def cmd_prepare(args) -> int:
    cfg = resolve_config(args)
    _print_config(cfg)
    if not os.path.exists(args.annotations):
        print(f"error: annotation file not found: {args.annotations}",
              file=sys.stderr)
        return 2
    if not os.path.isdir(args.frames):
        print(f"error: frame directory not found: {args.frames}",
              file=sys.stderr)
        return 2
    os.makedirs(args.workdir, exist_ok=True)
    manifest = data.prepare_dataset(
        args.annotations, args.frames, args.workdir,
        target=cfg["balance_target"], seed=cfg["seed"],
        ranges=_aug_ranges(cfg))
    print(f"{'class':<16} {'train':>7} {'val':>7} {'test':>7}")
    for name in CLASS_NAMES:
        row = [manifest.per_class_counts(s)[name] for s in data.SPLITS]
        print(f"{name:<16} {row[0]:>7} {row[1]:>7} {row[2]:>7}")
    print(f"manifest written to {os.path.join(args.workdir, 'manifest.tsv')}")
    return 0


def cmd_inspect(args) -> int:
    if os.path.exists(args.model):
        model, config, _, _ = ckpt.restore_model(args.model)
    else:
        try:
            config = registry_lookup(int(args.model))
        except (ValueError, PednetError):
            print(f"error: {args.model!r} is neither a checkpoint path nor "
                  "a model id 1..8", file=sys.stderr)
            return 2
        model = build_model(config, seed=0)
    ledger, total, trainable = model.summary()
    print(f"{'idx':>4} {'layer':<28} {'kind':<14} {'trainable':>12} "
          f"{'non-trainable':>14}")
    for e in ledger:
        print(f"{e.index:>4} {e.name:<28} {e.kind:<14} {e.trainable:>12,} "
              f"{e.non_trainable:>14,}")
    print(f"total parameters: {total:,} / trainable: {trainable:,}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _print_config(cfg)
    if not os.path.exists(args.manifest):
        print(f"error: manifest not found: {args.manifest}", file=sys.stderr)
        return 2
    config = registry_lookup(args.model_id)
    manifest = data.read_manifest(args.manifest)
    x_train, y_train = data.load_split_arrays(manifest, "train")
    x_val, y_val = data.load_split_arrays(manifest, "val")
    model = build_model(config, seed=cfg["seed"])
    tc = train.TrainConfig(seed=cfg["seed"], batch_size=cfg["batch_size"],
                           max_epochs_phase1=cfg["epochs"],
                           max_epochs_phase2=cfg["epochs_phase2"],
                           patience=cfg["patience"])
    history = train.train(model, config, tc, x_train, y_train, x_val, y_val)
    os.makedirs(args.workdir, exist_ok=True)
    opt = optim.make_optimizer(config)
    ckpt_path = os.path.join(args.workdir, f"model{config.model_id}.pdcn")
    ckpt.save_model(ckpt_path, model, config, optimizer=opt, history=history,
                    extra_meta={"seed": cfg["seed"]})
    hist_path = os.path.join(args.workdir, f"model{config.model_id}_history.csv")
    with open(hist_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(history.to_csv())
    with open(os.path.join(args.workdir,
                           f"model{config.model_id}_config.txt"), "w",
              encoding="utf-8", newline="\n") as f:
        for key in sorted(cfg):
            f.write(f"{key} = {cfg[key]}\n")
    last = history.records[-1]
    print(f"stopped after epoch {last.epoch} ({history.stop_reason}); "
          f"best epoch {history.best_epoch}")
    print(f"checkpoint written to {ckpt_path}")
    print(f"history written to {hist_path}")
    return 0


def cmd_evaluate(args) -> int:
    for path in (args.checkpoint, args.manifest):
        if not os.path.exists(path):
            print(f"error: missing input: {path}", file=sys.stderr)
            return 2
    model, config, _, _ = ckpt.restore_model(args.checkpoint)
    manifest = data.read_manifest(args.manifest)
    x, y = data.load_split_arrays(manifest, args.split)
    preds = np.concatenate([model.forward(x[i:i + 8], train=False)
                            for i in range(0, len(x), 8)])
    report = metrics.build_report(config.model_id, preds, y.argmax(axis=1))
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir,
                               f"model{config.model_id}_{args.split}_report.json")
    with open(report_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(metrics.report_to_json(report))
    csv_path = os.path.join(out_dir,
                            f"model{config.model_id}_{args.split}_pr_curves.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(metrics.pr_curves_to_csv(report))
    print(f"accuracy {report.accuracy:.4f}  macro PR-AUC "
          f"{report.pr_auc_macro:.4f}")
    print(f"report written to {report_path}")
    return 0


def cmd_infer(args) -> int:
    if not os.path.exists(args.checkpoint):
        print(f"error: missing checkpoint: {args.checkpoint}", file=sys.stderr)
        return 2
    model, _, _, _ = ckpt.restore_model(args.checkpoint)
    failed = False
    for path in args.images:
        try:
            img = data.load_image(path)
            img = data.bilinear_resize(img, data.CROP_SIZE, data.CROP_SIZE)
            probs = model.forward(img[None].astype(np.float32) / 255.0,
                                  train=False)[0]
        except PednetError as e:
            print(f"{path}\terror: {e}", file=sys.stderr)
            failed = True
            continue
        label = CLASS_NAMES[int(probs.argmax())]
        prob_str = " ".join(f"{p:.6f}" for p in probs)
        print(f"{path}\t{label}\t{prob_str}")
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pednet",
        description="Six-class pedestrian demographics CNN engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("prepare", help="crop, split, balance, write manifest")
    add_common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--balance-target", dest="balance_target", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("inspect", help="print the parameter ledger")
    p.add_argument("model", help="model id 1..8 or checkpoint path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train a registry model on a manifest")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-id", dest="model_id", type=int, required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--epochs-phase2", dest="epochs_phase2", type=int)
    p.add_argument("--patience", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="write a metrics report for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=data.SPLITS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="classify images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_infer)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PednetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
