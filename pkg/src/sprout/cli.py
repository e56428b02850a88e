"""Command-line surface: train | eval | predict | summary | augment-preview.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error (bad flags,
missing paths, malformed data). Settings resolve as defaults < config file
(--config) < explicit flags; `--print-config` shows the merged result and
exits.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .augment import apply_affine, sample_augment_params
from .config import Config
from .dataset import (BatchLoader, Manifest, load_image, read_split_csv,
                      scan_dataset, split, write_split_csv)
from .errors import DatasetError, NumericError, SproutError
from .metrics import (classification_report, confusion_matrix,
                      write_confusion_csv, write_report_csv)
from .model import build_model, count_params
from .rng import Rng, mix64
from .trainer import collect_predictions, evaluate, run_training


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data-dir", dest="data_dir", help="class-per-directory image tree")
    p.add_argument("--out", dest="out_dir", help="artifact output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--freeze", dest="freeze_prefix", type=int,
                   help="freeze layers with index below this")
    p.add_argument("--alpha", help="width multiplier (0.25, 0.5, 0.75, 1.0)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--classes", dest="num_classes", type=int,
                   help="number of classes (default: inferred from data)")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=None, help="single-threaded, bit-reproducible runs")
    p.add_argument("--lenient", action="store_true",
                   help="skip undecodable images instead of failing")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective merged config and exit")


def build_parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(prog="sprout")
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset tree")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a subset")
    _add_common(p)
    p.add_argument("--weights", required=True, help="checkpoint archive")
    p.add_argument("--split", dest="split_csv", help="existing split.csv")
    p.add_argument("--subset", default="test", choices=["train", "val", "test", "all"])

    p = sub.add_parser("predict", help="classify images with a checkpoint")
    _add_common(p)
    p.add_argument("--weights", required=True, help="checkpoint archive")
    p.add_argument("images", nargs="+", help="image files to classify")

    p = sub.add_parser("summary", help="print the layer table and param counts")
    _add_common(p)
    p.add_argument("--enum-csv", dest="enum_csv",
                   help="also write the enumeration as CSV")

    p = sub.add_parser("augment-preview", help="write augmented samples as PNG")
    _add_common(p)
    p.add_argument("image", help="source image")
    p.add_argument("--count", type=int, default=8)
    return root


def load_config(args) -> Config:
    cfg = Config()
    if args.config:
        cfg.merge_file(args.config)
    overrides = {}
    for key in ("data_dir", "out_dir", "seed", "freeze_prefix", "alpha", "epochs",
                "batch_size", "image_size", "num_classes", "deterministic"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    cfg.merge_overrides(overrides)
    return cfg


def _require_data_dir(cfg: Config) -> str:
    if not cfg.data_dir:
        raise DatasetError("no data directory given (--data-dir or data_dir=...)")
    if not os.path.isdir(cfg.data_dir):
        raise DatasetError(f"data directory not found: {cfg.data_dir}")
    return cfg.data_dir


def _resolve_classes(cfg: Config, class_names: list[str]) -> int:
    if cfg.num_classes and cfg.num_classes != len(class_names):
        raise DatasetError(
            f"config expects {cfg.num_classes} classes, dataset has "
            f"{len(class_names)}: {class_names}"
        )
    return len(class_names)


def cmd_train(cfg: Config, lenient: bool) -> int:
    data_dir = _require_data_dir(cfg)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    manifest = scan_dataset(data_dir, lenient=lenient)
    num_classes = _resolve_classes(cfg, manifest.class_names)
    train_m, val_m, test_m = split(manifest, cfg.split_spec())
    write_split_csv(os.path.join(out_dir, "split.csv"), train_m, val_m, test_m)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dump())

    model = build_model(cfg.alpha, cfg.image_size, num_classes,
                        cfg.freeze_prefix, seed=cfg.seed)
    threads = cfg.loader_threads()
    train_loader = BatchLoader(train_m, cfg.batch_size, cfg.image_size,
                               shuffle=True, augment=cfg.augment_policy(),
                               seed=cfg.seed, threads=threads)
    val_loader = BatchLoader(val_m, cfg.batch_size, cfg.image_size,
                             seed=cfg.seed, threads=threads)
    best_path = os.path.join(out_dir, "best.ckpt")
    class_meta = ",".join(manifest.class_names)

    def save_fn(mdl, optimizer, state):
        ckpt.save_checkpoint(mdl, best_path, optimizer=optimizer, metadata={
            "epoch": str(state.epoch),
            "lr": f"{state.current_lr:.10g}",
            "val_loss": f"{state.best_val_loss:.10g}",
            "class_names": class_meta,
        })

    model, history = run_training(model, train_loader, val_loader,
                                  cfg.train_config(), out_dir=out_dir,
                                  save_fn=save_fn)

    test_loader = BatchLoader(test_m, cfg.batch_size, cfg.image_size,
                              seed=cfg.seed, threads=threads)
    y_true, y_pred = collect_predictions(model, test_loader)
    cm = confusion_matrix(y_true, y_pred, num_classes, manifest.class_names)
    report = classification_report(cm)
    write_confusion_csv(cm, os.path.join(out_dir, "confusion.csv"))
    write_report_csv(report, os.path.join(out_dir, "report.csv"))
    print(f"test accuracy {report.accuracy:.6f}")
    return 0


def _eval_manifests(cfg: Config, args) -> tuple[Manifest, Manifest, Manifest]:
    data_dir = _require_data_dir(cfg)
    if args.split_csv:
        return read_split_csv(args.split_csv, data_dir)
    manifest = scan_dataset(data_dir, lenient=args.lenient)
    return split(manifest, cfg.split_spec())


def cmd_eval(cfg: Config, args) -> int:
    train_m, val_m, test_m = _eval_manifests(cfg, args)
    subset = args.subset
    if subset == "all":
        merged = sorted(set(train_m.entries + val_m.entries + test_m.entries))
        chosen = Manifest(merged, train_m.class_names, train_m.root)
    else:
        chosen = {"train": train_m, "val": val_m, "test": test_m}[subset]
    if len(chosen) == 0:
        raise DatasetError(f"no samples in subset {subset!r}")
    num_classes = _resolve_classes(cfg, chosen.class_names)
    model = build_model(cfg.alpha, cfg.image_size, num_classes,
                        cfg.freeze_prefix, seed=cfg.seed)
    ckpt.load_checkpoint(args.weights, model)
    loader = BatchLoader(chosen, cfg.batch_size, cfg.image_size,
                         seed=cfg.seed, threads=cfg.loader_threads())
    y_true, y_pred = collect_predictions(model, loader)
    cm = confusion_matrix(y_true, y_pred, num_classes, chosen.class_names)
    report = classification_report(cm)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    write_confusion_csv(cm, os.path.join(out_dir, "confusion.csv"))
    write_report_csv(report, os.path.join(out_dir, "report.csv"))
    loss, acc = evaluate(model, loader, cfg.lambda_l2)
    print(f"{subset} loss {loss:.6f} accuracy {acc:.6f}")
    return 0


def cmd_predict(cfg: Config, args) -> int:
    archive = ckpt.read_archive(args.weights)
    class_names = archive.metadata.get("class_names", "")
    names = class_names.split(",") if class_names else []
    num_classes = len(names) or cfg.num_classes
    if not num_classes:
        raise DatasetError("checkpoint lacks class names; pass --classes")
    if not names:
        names = [str(i) for i in range(num_classes)]
    model = build_model(cfg.alpha, cfg.image_size, num_classes,
                        cfg.freeze_prefix, seed=cfg.seed)
    ckpt.load_checkpoint(args.weights, model)
    failures = 0
    for path in args.images:
        try:
            img = load_image(path, cfg.image_size)
        except DatasetError as exc:
            print(f"error: {exc}", file=sys.stderr)
            failures += 1
            continue
        x = (img / np.float32(255.0))[None]
        probs = model.forward(x, training=False)[0]
        top = int(probs.argmax())
        print(f"{path},{names[top]},{probs[top]:.6f}")
    return 1 if failures else 0


def cmd_summary(cfg: Config, args) -> int:
    num_classes = cfg.num_classes or 7
    model = build_model(cfg.alpha, cfg.image_size, num_classes,
                        cfg.freeze_prefix, seed=cfg.seed)
    rows = model.enumeration()
    widths = ("{:>5} {:<16} {:<14} {:>12} {:>13}  {}")
    print(widths.format("index", "name", "kind", "trainable", "non-trainable",
                        "out shape"))
    for r in rows:
        shape = "x".join(str(s) for s in r["out_shape"])
        frozen = " [frozen]" if r["frozen"] else ""
        print(widths.format(r["index"], r["name"], r["kind"], r["trainable"],
                            r["non_trainable"], shape + frozen))
    total, trainable, non_trainable = count_params(model)
    print(f"params: {total:,} / {trainable:,} / {non_trainable:,} "
          f"(total / trainable / non-trainable)")
    if args.enum_csv:
        with open(args.enum_csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(model.enumeration_csv())
    return 0


def cmd_augment_preview(cfg: Config, args) -> int:
    from PIL import Image

    img = load_image(args.image, cfg.image_size)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    policy = cfg.augment_policy()
    for i in range(args.count):
        rng = Rng(mix64(cfg.seed, 0xA46, i))
        params = sample_augment_params(rng, policy, img.shape[:2])
        aug = apply_affine(img, params, policy.fill_mode)
        path = os.path.join(out_dir, f"preview_{i:02d}.png")
        Image.fromarray(np.clip(aug, 0, 255).astype(np.uint8)).save(path)
        print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.print_config:
            sys.stdout.write(cfg.dump())
            return 0
        if args.command == "train":
            return cmd_train(cfg, args.lenient)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "predict":
            return cmd_predict(cfg, args)
        if args.command == "summary":
            return cmd_summary(cfg, args)
        if args.command == "augment-preview":
            return cmd_augment_preview(cfg, args)
        raise AssertionError(f"unhandled command {args.command}")
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SproutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # bad argument values surface from validation deep in the stack
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
