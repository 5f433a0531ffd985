"""Command-line entry point: ``malgray <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, backend, errors
from .dataset import (
    FAMILIES,
    ImageLoader,
    SplitSpec,
    build_manifest,
    read_manifest,
    split,
    write_manifest,
)
from .errors import MalgrayError
from .evaluation import confusion, predict_manifest, read_confusion_csv, report, write_confusion_csv
from .imaging import ResizeSpec, convert_hexdump, write_pgm
from .models import build_scratch_cnn, build_transfer_model, resolve_backbone
from .trainer import (
    TrainConfig,
    read_metrics,
    restore,
    train_scratch,
    train_transfer_two_phase,
    write_metrics,
)

ENV_EXPERIMENT_DIR = "MALGRAY_EXPERIMENT_DIR"
log = logging.getLogger("malgray")


class UsageError(MalgrayError):
    code, exit_code = "UsageError", 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR UsageError: {message}", file=sys.stderr)
        raise SystemExit(2)


def _exit_table() -> str:
    rows = ["exit codes:", "  0   success", "  2   UsageError"]
    rows += [f"  {cls.exit_code:<3d} {cls.code}" for cls in errors.all_errors() if cls.exit_code != 2]
    return "\n".join(rows)


def _default_dir():
    return os.environ.get(ENV_EXPERIMENT_DIR, ".")


def write_run_meta(experiment_dir, command: str, resolved: dict) -> str:
    """Record the resolved flags of ``command`` under its own key in ``run.meta`` (JSON)."""
    os.makedirs(experiment_dir, exist_ok=True)
    path = os.path.join(experiment_dir, "run.meta")
    meta = {}
    if os.path.isfile(path):
        try:
            with open(path) as fh:
                meta = json.load(fh)
        except ValueError:
            meta = {}
    meta[command] = resolved
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _resolved(args) -> dict:
    out = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    out["cwd"] = os.getcwd()
    out["backend"] = backend.BACKEND
    out["version"] = __version__
    return out


# -- subcommands ---------------------------------------------------------------

def _convert_one(job):
    path, out_dir, row_width, spec, unknown = job
    sid = os.path.splitext(os.path.basename(path))[0]
    img = convert_hexdump(path, row_width, spec, unknown)
    target = os.path.join(out_dir, sid + ".pgm")
    write_pgm(img, target)
    return target


def cmd_convert(args):
    files = []
    for item in args.inputs:
        if os.path.isdir(item):
            files += sorted(glob.glob(os.path.join(item, "*.bytes")))
        else:
            files.append(item)
    if not files:
        raise UsageError("no .bytes inputs found")
    row_width = args.row_width if args.row_width == "auto" else int(args.row_width)
    spec = ResizeSpec.parse(args.target, args.interp)
    os.makedirs(args.out, exist_ok=True)
    jobs = [(f, args.out, row_width, spec, args.unknown) for f in files]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            written = list(pool.map(_convert_one, jobs))
    else:
        written = [_convert_one(j) for j in jobs]
    write_run_meta(args.experiment_dir, "convert", _resolved(args))
    print(f"converted {len(written)} files into {args.out}")


def cmd_manifest(args):
    m = build_manifest(args.root, args.labels)
    write_manifest(m, args.out)
    write_run_meta(args.experiment_dir, "manifest", _resolved(args))
    counts = m.family_counts()
    print(f"{len(m)} samples: " + ", ".join(f"{FAMILIES[i]} {counts[i]}" for i in range(len(FAMILIES))))


def cmd_split(args):
    m = read_manifest(args.manifest)
    mode = {"uniform": "uniform_random", "stratified": "stratified"}[args.mode]
    train, test = split(m, SplitSpec(args.train, args.test, args.seed, mode))
    from .dataset import Manifest

    write_manifest(Manifest(train.records + test.records), args.out)
    write_run_meta(args.experiment_dir, "split", _resolved(args))
    print(f"train {len(train)} / test {len(test)} -> {args.out}")


def _loader(args, graph):
    return ImageLoader(input_shape=tuple(graph.input_shape), interp=args.interp, normalization=args.normalize,
                       mean=args.mean, std=args.std, dtype=graph.dtype)


def cmd_train(args):
    m = read_manifest(args.split)
    train, test = m.partition("train"), m.partition("test")
    if not len(train):
        raise UsageError(f"{args.split} has no rows with split=train (run 'split' first)")
    if args.protocol == "transfer":
        bb = resolve_backbone(args.backbone, args.weights)
        graph = build_transfer_model(bb, seed=args.seed)
    else:
        graph = build_scratch_cnn(args.scale, in_channels=args.channels, seed=args.seed)
    cfg = TrainConfig(
        protocol="transfer_two_phase" if args.protocol == "transfer" else "scratch",
        phase1_epochs=args.phase1_epochs, phase1_lr=args.phase1_lr, phase2_epochs=args.phase2_epochs,
        phase2_lr=args.phase2_lr, scratch_epochs=args.epochs, batch_size=args.batch, seed=args.seed,
        eval_every_epoch=not args.no_eval, reset_optimizer=args.reset_optimizer,
        record_wall_time=not args.no_wall_clock, checkpoint_every_epoch=args.checkpoint_every_epoch,
    ).validate()
    out = args.experiment_dir
    os.makedirs(out, exist_ok=True)
    write_run_meta(out, "train", _resolved(args))
    ckpt = os.path.join(out, "checkpoints")
    fn = train_transfer_two_phase if cfg.protocol == "transfer_two_phase" else train_scratch
    graph, metrics = fn(graph, train, test, cfg, loader=_loader(args, graph), checkpoint_dir=ckpt)
    write_metrics(metrics, os.path.join(out, "metrics.csv"))
    last = metrics[-1] if metrics else None
    if last:
        print(f"{len(metrics)} epochs; final train_acc {last.train_accuracy:.4f} test_acc {last.test_accuracy:.4f}")


def _final_checkpoint(path):
    if os.path.isfile(os.path.join(path, "weights.ntc")):
        return path
    for name in ("phase2", "scratch", "phase1"):
        cand = os.path.join(path, "checkpoints", name) if not path.endswith("checkpoints") else os.path.join(path, name)
        if os.path.isfile(os.path.join(cand, "weights.ntc")):
            return cand
    raise errors.BadMagic(f"no checkpoint found under {path}")


def cmd_eval(args):
    state = restore(_final_checkpoint(args.checkpoint))
    m = read_manifest(args.split)
    part = m.partition(args.partition) if args.partition != "all" else m
    truth, pred = predict_manifest(state.graph, part, _loader(args, state.graph), args.batch)
    cm = confusion(truth, pred)
    os.makedirs(args.out, exist_ok=True)
    write_confusion_csv(cm, os.path.join(args.out, "confusion.csv"))
    with open(os.path.join(args.out, "predictions.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "true_index", "pred_index", "pred_name"])
        for r, t, p in zip(part.records, truth, pred):
            w.writerow([r.sample_id, int(t), int(p), FAMILIES[p]])
    write_run_meta(args.experiment_dir, "eval", _resolved(args))
    print(f"accuracy {cm.accuracy():.4f} on {cm.total} samples")


def cmd_predict(args):
    state = restore(_final_checkpoint(args.checkpoint))
    g = state.graph
    loader = _loader(args, g)
    from .dataset import FamilyLabel, SampleRecord
    from .tensor.graph import predict_proba

    rec = SampleRecord(os.path.basename(args.file), args.file, FamilyLabel.from_index(0))
    probs = predict_proba(g, loader([rec]))[0]
    k = int(np.argmax(probs))
    print(f"{FAMILIES[k]}\t{k}\t{probs[k]:.6g}")
    if args.all:
        for i, name in enumerate(FAMILIES):
            print(f"  {name}\t{probs[i]:.6g}")


def cmd_report(args):
    runs = {}
    for item in args.metrics:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = os.path.splitext(os.path.basename(item))[0], item
        runs[name] = read_metrics(path)
    cm = read_confusion_csv(args.confusion)
    paths = report(runs, cm, args.out)
    write_run_meta(args.experiment_dir, "report", _resolved(args))
    print(f"report written to {args.out}")


# -- parser --------------------------------------------------------------------

def _add_input_flags(p):
    p.add_argument("--normalize", choices=("unit", "meanstd"), default="unit")
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--interp", choices=("bilinear", "nearest"), default="bilinear")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="malgray", description="Malware byteplot images and family classification.",
                     epilog=_exit_table(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--experiment-dir", default=_default_dir(),
                        help=f"where run.meta and training outputs go (default ${ENV_EXPERIMENT_DIR} or .)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", help=".bytes hexdumps -> PGM byteplots")
    p.add_argument("inputs", nargs="+", help=".bytes files or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--row-width", default="16", help="pixels per row, or 'auto'")
    p.add_argument("--target", default="256x256", help="WIDTHxHEIGHT")
    p.add_argument("--interp", choices=("bilinear", "nearest"), default="bilinear")
    p.add_argument("--unknown", choices=("zero", "skip"), default="zero")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("manifest", help="label CSV + sample directory -> manifest CSV")
    p.add_argument("--root", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("split", help="assign train/test")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train", type=int, default=9000)
    p.add_argument("--test", type=int, default=1868)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("uniform", "stratified"), default="uniform")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="run a training protocol")
    p.add_argument("--split", required=True, help="manifest CSV with split column")
    p.add_argument("--protocol", choices=("transfer", "scratch"), default="transfer")
    p.add_argument("--backbone", default="tiny", help="'tiny' or a backbone descriptor file")
    p.add_argument("--weights", default=None, help="NTC weights for the backbone")
    p.add_argument("--scale", choices=("paper", "tiny"), default="paper", help="scratch CNN size")
    p.add_argument("--channels", type=int, choices=(1, 3), default=1, help="scratch CNN input channels")
    p.add_argument("--phase1-epochs", type=int, default=15)
    p.add_argument("--phase1-lr", type=float, default=0.01)
    p.add_argument("--phase2-epochs", type=int, default=10)
    p.add_argument("--phase2-lr", type=float, default=1e-5)
    p.add_argument("--epochs", type=int, default=25, help="scratch protocol epochs")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reset-optimizer", action="store_true")
    p.add_argument("--no-eval", action="store_true", help="skip per-epoch test evaluation")
    p.add_argument("--no-wall-clock", action="store_true", help="write 0 for wall_seconds")
    p.add_argument("--checkpoint-every-epoch", action="store_true")
    _add_input_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="confusion matrix of a checkpoint on a partition")
    p.add_argument("--checkpoint", required=True, help="checkpoint dir or experiment dir")
    p.add_argument("--split", required=True)
    p.add_argument("--partition", choices=("train", "test", "all"), default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int, default=64)
    _add_input_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one .bytes or .pgm file")
    p.add_argument("file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--all", action="store_true", help="print every family's probability")
    _add_input_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="curves, confusion CSV/heatmap and per-family recall")
    p.add_argument("--metrics", nargs="+", required=True, help="metrics CSVs, optionally NAME=PATH")
    p.add_argument("--confusion", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MalgrayError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ERROR IoFailure: {exc}", file=sys.stderr)
        return errors.IoFailure.exit_code
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
