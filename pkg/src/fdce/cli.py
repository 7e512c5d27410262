"""Command-line interface.

Subcommands map to the analysis experiments and the training/evaluation
protocol: `swap` (amplitude/phase exchange), `component` (single-component
reconstruction), `train`, `enhance`, `eval`, `queries` (color-query
activation maps).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields as dataclass_fields

import numpy as np

from . import fourier, metrics
from .dce import FeaturePyramid, visualize_query
from .imageio import (ImageIOError, PairedDataset, load_image, save_grayscale,
                      save_image, to_batch)
from .tensor import Tensor, TensorError
from .train import (CheckpointError, TrainConfig, TrainingDivergence,
                    load_model, train_loop)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="fdce", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("swap", help="exchange amplitude and phase of two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("outdir")

    p = sub.add_parser("component",
                       help="reconstruct from amplitude or phase only")
    p.add_argument("image")
    p.add_argument("--keep", choices=("amplitude", "phase"), required=True)
    p.add_argument("--out", help="output file (default <image>.<keep>.ppm)")

    p = sub.add_parser("train", help="train the full pipeline")
    p.add_argument("--data", required=True, help="dataset dir with degraded/ "
                   "and reference/ subdirectories")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="key = value file overriding defaults")
    p.add_argument("--log", help="epoch log CSV (default <out>.log.csv)")
    p.add_argument("--val-data", help="optional validation dataset dir")

    p = sub.add_parser("enhance", help="enhance images with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("images", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--coarse", action="store_true",
                   help="also write the coarse FS-Net result")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("eval", help="evaluate a model over a paired dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("queries", help="write per-query activation maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("image")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def read_config_file(path, cfg=None):
    """Flat `key = value` file mirroring TrainConfig field names."""
    cfg = cfg or TrainConfig()
    known = {f.name: f for f in dataclass_fields(TrainConfig)}
    overrides = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, _, value = (s.strip() for s in line.partition("="))
            if key not in known:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            typ = known[key].type
            if typ in ("bool", bool):
                if value.lower() not in ("true", "false", "0", "1"):
                    raise UsageError(f"{path}:{lineno}: bad boolean {value!r}")
                overrides[key] = value.lower() in ("true", "1")
            elif typ in ("int", int):
                overrides[key] = int(value)
            else:
                overrides[key] = float(value)
    merged = {f.name: getattr(cfg, f.name) for f in dataclass_fields(TrainConfig)}
    merged.update(overrides)
    return TrainConfig(**merged)


def _pad_to_multiple(img, mult=8):
    h, w = img.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return img, h, w


def _enhance_one(model, path):
    img = load_image(path)
    padded, h, w = _pad_to_multiple(img)
    y_hat, y_prime, _, _ = model(Tensor(to_batch([padded])))
    coarse = np.moveaxis(y_hat.data[0], 0, -1)[:h, :w]
    final = np.moveaxis(y_prime.data[0], 0, -1)[:h, :w]
    return final, coarse


def _cmd_swap(args):
    a = load_image(args.image_a)
    b = load_image(args.image_b)
    rec_ab, rec_ba = fourier.swap_experiment(a, b)
    os.makedirs(args.outdir, exist_ok=True)
    stem_a = os.path.splitext(os.path.basename(args.image_a))[0]
    stem_b = os.path.splitext(os.path.basename(args.image_b))[0]
    save_image(rec_ab, os.path.join(args.outdir,
                                    f"amp_{stem_a}_pha_{stem_b}.ppm"))
    save_image(rec_ba, os.path.join(args.outdir,
                                    f"amp_{stem_b}_pha_{stem_a}.ppm"))
    return EXIT_OK


def _cmd_component(args):
    img = load_image(args.image)
    rec = fourier.component_only(img, args.keep)
    out = args.out or os.path.splitext(args.image)[0] + f".{args.keep}.ppm"
    save_image(rec, out)
    return EXIT_OK


def _cmd_train(args):
    cfg = read_config_file(args.config) if args.config else TrainConfig()
    dataset = PairedDataset(args.data)
    val = PairedDataset(args.val_data) if args.val_data else None
    log_path = args.log or args.out + ".log.csv"

    def progress(row):
        print(f"epoch {row['epoch']:4d}  lr {row['lr']:.3e}  "
              f"total {row['total']:.5f}")

    train_loop(cfg, dataset, ckpt_path=args.out, log_path=log_path,
               val_dataset=val, progress=progress)
    return EXIT_OK


def _cmd_enhance(args):
    model, _ = load_model(args.ckpt)
    os.makedirs(args.out, exist_ok=True)

    def work(path):
        return _enhance_one(model, path)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, args.images))
    else:
        results = [work(p) for p in args.images]
    for path, (final, coarse) in zip(args.images, results):
        stem = os.path.splitext(os.path.basename(path))[0]
        save_image(final, os.path.join(args.out, f"{stem}_enhanced.ppm"))
        if args.coarse:
            save_image(coarse, os.path.join(args.out, f"{stem}_coarse.ppm"))
    return EXIT_OK


def _cmd_eval(args):
    model, _ = load_model(args.ckpt)
    dataset = PairedDataset(args.data)

    def work(i):
        x, y = dataset.load(i)
        padded, h, w = _pad_to_multiple(x)
        _, y_prime, _, _ = model(Tensor(to_batch([padded])))
        yp = np.moveaxis(y_prime.data[0], 0, -1)[:h, :w]
        return metrics.evaluate_pair(yp, y)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(work, range(len(dataset))))
    else:
        rows = [work(i) for i in range(len(dataset))]
    report = metrics.MetricReport()
    for name, row in zip(dataset.names, rows):
        report.add(name, **row)
    report.write_csv(args.out)
    print(report.summary())
    return EXIT_OK


def _cmd_queries(args):
    model, _ = load_model(args.ckpt)
    img = load_image(args.image)
    padded, _, _ = _pad_to_multiple(img)
    x = Tensor(to_batch([padded]))
    pyramid, _ = model.fce(x)
    embeddings = model.sce.forward_single(
        model.bank.embeddings,
        FeaturePyramid(pyramid.f1, pyramid.f2, pyramid.f3))
    last_block = model.sce.blocks[-1]  # consumes the 1/8-scale features
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    for m in range(embeddings.shape[0]):
        amap = visualize_query(embeddings[m], pyramid.f3, last_block.key_proj)
        save_grayscale(amap, os.path.join(args.out, f"{stem}_query{m}.ppm"))
    return EXIT_OK


_COMMANDS = {
    "swap": _cmd_swap,
    "component": _cmd_component,
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "eval": _cmd_eval,
    "queries": _cmd_queries,
}


def dispatch(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageIOError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TensorError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
