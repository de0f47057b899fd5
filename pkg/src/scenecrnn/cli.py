"""Command-line front end: synth, train, calibrate, eval, dump-attention.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as tn
from .attention import write_mask_csv
from .calibrate import SVM_C, extract_features, load_svm, save_svm, svm_predict_proba, train_svm
from .data import (ManifestError, default_cache_dir, default_recipes, dataset_features, generate_synth_dataset,
                   load_manifest, write_manifest)
from .dsp import FEATURE_KINDS, feature_config
from .infer import fuse_by_recording, fuse_models, segment_posteriors, write_predictions
from .layers import ModelConfig
from .metrics import classification_report
from .model import MODEL_KINDS, build_model, load_model
from .train import TrainConfig, TrainingDiverged, train, write_history

log = logging.getLogger("scenecrnn")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _int_tuple(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scenecrnn", description="Acoustic scene classification with an attention CRNN.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic scene corpus (WAVs + manifest)")
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=30.0, help="seconds per recording")
    s.add_argument("--test-per-class", type=int, default=None)
    s.add_argument("--test-fraction", type=float, default=0.3)
    s.add_argument("--out", required=True, help="output directory")

    def data_flags(q):
        q.add_argument("--manifest", required=True)
        q.add_argument("--features", choices=sorted(FEATURE_KINDS), default="logmel")
        q.add_argument("--cache-dir", default=None, help="feature cache (default $SCENECRNN_CACHE, else .feature_cache "
                                                         "next to the manifest)")
        q.add_argument("--batch-size", type=int, default=100)

    t = sub.add_parser("train", help="train an Att-CRNN or the CNN baseline")
    data_flags(t)
    t.add_argument("--model", choices=MODEL_KINDS, default="att_crnn")
    t.add_argument("--epochs", type=int, default=500)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint", default=None, help="checkpoint path (default <out>/model.crnn)")
    t.add_argument("--out", default="run", help="output directory for history and figures")
    t.add_argument("--hidden", type=int, default=128, help="GRU hidden size H")
    t.add_argument("--att-size", type=int, default=64)
    t.add_argument("--conv-filters", type=_int_tuple, default=(64, 128, 256))
    t.add_argument("--conv-dropout", type=float, default=0.25)
    t.add_argument("--rnn-dropout", type=float, default=0.1)
    t.add_argument("--bn-momentum", type=float, default=0.99)
    t.add_argument("--svm-c", type=float, default=SVM_C, help="echoed for the later calibrate step")
    t.add_argument("--no-standardize", action="store_true", help="skip per-band input standardisation")
    t.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")

    c = sub.add_parser("calibrate", help="fit the linear SVM + Platt scaling on network features")
    data_flags(c)
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--svm", default=None, help="output SVM file (default <checkpoint>.svm)")
    c.add_argument("--svm-c", type=float, default=SVM_C)
    c.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="segment and recording level metrics on the test split")
    data_flags(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--svm", default=None, help="use SVM posteriors instead of the softmax head")
    e.add_argument("--fuse-with", default=None, help="second checkpoint fused multiplicatively")
    e.add_argument("--fuse-svm", default=None, help="SVM file for the --fuse-with model")
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--out", default=None, help="directory for predictions, metrics and figures")
    e.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("dump-attention", help="write the attention mask of one segment as CSV and PNG")
    data_flags(d)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--recording", default=None, help="recording id (default: first test recording)")
    d.add_argument("--segment", type=int, default=0)
    d.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------
# helpers


def _cache_dir(args) -> Path:
    return Path(args.cache_dir) if args.cache_dir else default_cache_dir(args.manifest)


def _load(args, split: str):
    ds = load_manifest(args.manifest)
    items = ds.split(split)
    if not items:
        raise UsageError(f"manifest has no {split!r} items")
    feats = dataset_features(items, feature_config(args.features), _cache_dir(args))
    return ds, items, feats


def _positive(name, value):
    if value is None or value < 1:
        raise UsageError(f"--{name} must be >= 1")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    if args.classes < 2:
        raise UsageError("--classes must be at least 2 (minimum classes for scene classification)")
    _positive("per-class", args.per_class)
    if args.per_class < 2:
        raise UsageError("--per-class must be at least 2 so both splits hold every class")
    ds = generate_synth_dataset(default_recipes(args.classes, args.seed), args.per_class, args.seed,
                                args.duration, test_fraction=args.test_fraction,
                                test_per_class=args.test_per_class)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.csv", ds)
    n_test = len(ds.split("test"))
    print(f"wrote {len(ds.items)} recordings ({len(ds.items) - n_test} train, {n_test} test) "
          f"to {out / 'manifest.csv'}")
    return EXIT_OK


def _train_configs(args, n_classes: int) -> tuple[ModelConfig, TrainConfig]:
    try:
        mcfg = ModelConfig(n_classes=n_classes, conv_filters=args.conv_filters, hidden=args.hidden,
                           att_size=args.att_size, conv_dropout=args.conv_dropout, rnn_dropout=args.rnn_dropout,
                           bn_momentum=args.bn_momentum)
        tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                           conv_dropout=args.conv_dropout, rnn_dropout=args.rnn_dropout, seed=args.seed,
                           model=args.model, standardize=not args.no_standardize)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    return mcfg, tcfg


def cmd_train(args) -> int:
    if args.print_config:
        mcfg, tcfg = _train_configs(args, 19)
        echo = {"features": args.features, "model": args.model, "epochs": tcfg.epochs,
                "batch_size": tcfg.batch_size, "lr": tcfg.learning_rate, "seed": tcfg.seed,
                "H": mcfg.hidden, "att_size": mcfg.att_size, "conv_filters": list(mcfg.conv_filters),
                "conv_dropout": tcfg.conv_dropout, "rnn_dropout": tcfg.rnn_dropout, "C_svm": args.svm_c}
        for k, v in echo.items():
            print(f"{k}={v}")
        return EXIT_OK
    ds, _, tr = _load(args, "train")
    _, _, te = _load(args, "test")
    mcfg, tcfg = _train_configs(args, ds.n_classes)
    model = build_model(args.model, mcfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.crnn"
    ckpt.parent.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        log.info("epoch %d/%d loss %.4f test segment accuracy %.4f", rec.epoch, tcfg.epochs,
                 rec.train_loss, rec.seg_accuracy)

    try:
        result = train(model, tr.images, tr.labels, tcfg, te.images, te.labels, on_epoch=progress)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    model.save(ckpt, extra={"features": args.features, "class_names": ds.class_names, "seed": args.seed,
                            "best_epoch": result.best_epoch, "best_accuracy": result.best_accuracy})
    write_history(out / "history.csv", result.history)
    from .plotting import plot_history
    plot_history(out / "history.png", result.history, f"{args.model} ({args.features})")
    print(f"best test segment accuracy {result.best_accuracy:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint {ckpt}")
    print(f"history {out / 'history.csv'}")
    return EXIT_OK


def _load_checkpoint(path):
    try:
        return load_model(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def cmd_calibrate(args) -> int:
    model, extra = _load_checkpoint(args.checkpoint)
    _, _, tr = _load(args, "train")
    feats = extract_features(model, tr.images, args.batch_size)
    svm = train_svm(feats, tr.labels, C=args.svm_c, n_classes=model.config.n_classes, seed=args.seed)
    path = Path(args.svm) if args.svm else Path(str(args.checkpoint) + ".svm")
    save_svm(path, svm)
    train_acc = float(np.mean(svm_predict_proba(svm, feats).argmax(axis=1) == tr.labels))
    print(f"svm written to {path} (C={svm.C:g}, training segment accuracy {train_acc:.4f})")
    return EXIT_OK


def _posteriors(model, svm_path, images, batch_size):
    svm = load_svm(svm_path) if svm_path else None
    return segment_posteriors(model, images, svm, batch_size)


def cmd_eval(args) -> int:
    model, extra = _load_checkpoint(args.checkpoint)
    ds, items, feats = _load(args, args.split)
    names = extra.get("class_names", ds.class_names)
    if list(names) != list(ds.class_names):
        raise UsageError(f"checkpoint classes {names} differ from manifest classes {ds.class_names}")
    seg = _posteriors(model, args.svm, feats.images, args.batch_size)
    ids, fused = fuse_by_recording(seg, feats.recording)
    if args.fuse_with:
        other, other_extra = _load_checkpoint(args.fuse_with)
        if other.config.n_classes != model.config.n_classes:
            raise UsageError("models to fuse have different numbers of classes")
        seg_b = _posteriors(other, args.fuse_svm, feats.images, args.batch_size)
        _, fused_b = fuse_by_recording(seg_b, feats.recording)
        fused = fuse_models(fused, fused_b, names, other_extra.get("class_names", names))
    rec_labels = np.array([items[r].label for r in ids])
    seg_rep = classification_report(feats.labels, seg.argmax(axis=1), ds.n_classes)
    rec_rep = classification_report(rec_labels, fused.argmax(axis=1), ds.n_classes)
    metrics = {"segment_accuracy": seg_rep.accuracy, "recording_accuracy": rec_rep.accuracy,
               "macro_f1": rec_rep.macro_f1, "macro_precision": rec_rep.macro_precision,
               "segment_macro_f1": seg_rep.macro_f1, "segment_macro_precision": seg_rep.macro_precision}
    print("metric,value")
    for k, v in metrics.items():
        print(f"{k},{v:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_predictions(out / "predictions.csv", [items[r].id for r in ids], fused, names)
        with open(out / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            writer.writerows([k, repr(v)] for k, v in metrics.items())
        from .plotting import plot_confusion
        plot_confusion(out / "confusion.png", rec_rep.confusion, names, "recording-level confusion")
    return EXIT_OK


def cmd_dump_attention(args) -> int:
    model, _ = _load_checkpoint(args.checkpoint)
    if model.kind != "att_crnn":
        raise UsageError("dump-attention needs an att_crnn checkpoint")
    ds = load_manifest(args.manifest)
    pool = ds.split("test") or ds.items
    item = pool[0] if args.recording is None else next((it for it in ds.items if it.id == args.recording), None)
    if item is None:
        raise UsageError(f"recording {args.recording!r} not in manifest")
    feats = dataset_features([item], feature_config(args.features), _cache_dir(args))
    if not 0 <= args.segment < len(feats.images):
        raise UsageError(f"--segment must be in [0, {len(feats.images)})")
    image = feats.images[args.segment:args.segment + 1]
    with tn.no_grad():
        _, probs, mask = model.forward(tn.Tensor(image.astype(np.float32)), return_mask=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{item.id}_seg{args.segment:02d}"
    write_mask_csv(out / f"{stem}_mask.csv", mask.A[0])
    from .plotting import plot_attention
    plot_attention(out / f"{stem}_attention.png", image[0, 0], mask.a_spa[0], mask.a_tem[0], stem)
    print(json.dumps({"recording": item.id, "segment": args.segment,
                      "posterior": [round(float(p), 6) for p in probs.data[0]]}))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "calibrate": cmd_calibrate, "eval": cmd_eval,
            "dump-attention": cmd_dump_attention}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"scenecrnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"scenecrnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
