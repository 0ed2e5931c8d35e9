"""Command-line interface.

Subcommands: gen-data, train, eval, gradcheck, export-masks. Machine-readable
output goes to stdout, diagnostics to stderr. Exit codes: 0 success, 1 usage,
2 data/shape/config error, 3 numerical failure. ``ECENET_SEED`` overrides the
default seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import config_hash, load_config
from .data import gen_shapes, load_dataset, save_dataset
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    EcenetError,
    NumericalError,
)
from .extraction import write_pgm
from .evaluate import evaluate, predict_labels
from .gradcheck import op_gradient_suite
from .model import end_to_end_gradcheck
from .tnsr import read_tnsr
from .train import restore_run, train

OP_TOLERANCE = 1e-6
E2E_TOLERANCE = 1e-4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _env_seed(default: int) -> int:
    raw = os.environ.get("ECENET_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"ECENET_SEED must be an integer, got {raw!r}") from exc


def _build_parser() -> _Parser:
    parser = _Parser(prog="ecenet")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write synthetic TNSR image/label pairs")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run the optimization loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="per-class IoU and mIoU of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None,
                   help="config file (default: config.txt next to the checkpoint)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--full", action="store_true",
                   help="also run the end-to-end model check")

    p = sub.add_parser("export-masks", help="argmax prediction as a binary PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    return parser


def _load_run(checkpoint_path: str, config_path: str | None):
    ckpt = load_checkpoint(checkpoint_path)
    if config_path is None:
        sibling = Path(checkpoint_path).parent / "config.txt"
        if not sibling.exists():
            raise DataError(
                f"no config given and {sibling} does not exist; pass --config"
            )
        config_path = sibling
    cfg = load_config(config_path)
    if config_hash(cfg) != ckpt.config_hash:
        raise DataError(
            f"config {config_path} does not match the checkpoint (hash mismatch)"
        )
    return restore_run(ckpt, cfg), cfg


def _cmd_gen_data(args) -> int:
    seed = _env_seed(0) if args.seed is None else args.seed
    samples = gen_shapes(seed, args.count, args.size, args.classes)
    save_dataset(args.out, samples)
    print(f"samples={len(samples)} size={args.size} classes={args.classes} "
          f"seed={seed} dir={args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if os.environ.get("ECENET_SEED") is not None:
        cfg.seed = _env_seed(cfg.seed)
        cfg.validate()
    result = train(cfg, out_dir=args.out, log=print, progress=True)
    if result.final_eval is not None:
        print(f"final_miou={result.final_eval.miou:.4f}")
    print(f"checkpoint={result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = _load_run(args.checkpoint, args.config)
    samples = load_dataset(args.data)
    result = evaluate(model, samples)
    for c, iou in enumerate(result.per_class):
        text = "-" if np.isnan(iou) else f"{iou:.4f}"
        print(f"class={c} iou={text}")
    print(f"miou={result.miou:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    errors = op_gradient_suite(n_seeds=3)
    failed = False
    for name in sorted(errors):
        err = errors[name]
        status = "ok" if err < OP_TOLERANCE else "FAIL"
        failed = failed or err >= OP_TOLERANCE
        print(f"op={name} max_rel_err={err:.3e} status={status}")
    if args.full:
        e2e = end_to_end_gradcheck()
        for key in ("input", "parameters"):
            err = e2e[key]
            status = "ok" if err < E2E_TOLERANCE else "FAIL"
            failed = failed or err >= E2E_TOLERANCE
            print(f"end_to_end_{key} max_rel_err={err:.3e} status={status}")
    if failed:
        print("gradcheck: tolerance exceeded", file=sys.stderr)
        return 3
    return 0


def _cmd_export_masks(args) -> int:
    model, _ = _load_run(args.checkpoint, args.config)
    image = read_tnsr(args.image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"{args.image}: expected a (3, H, W) image tensor")
    pred = predict_labels(model, image)
    write_pgm(args.out, pred, maxval=model.cfg.n_classes - 1)
    print(f"mask={args.out} classes={model.cfg.n_classes}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        handler = {
            "gen-data": _cmd_gen_data,
            "train": _cmd_train,
            "eval": _cmd_eval,
            "gradcheck": _cmd_gradcheck,
            "export-masks": _cmd_export_masks,
        }[args.command]
        return handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, DimensionError, ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except EcenetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
