"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import nn
from .checkpoint import CheckpointError, atomic_write_bytes, load_checkpoint
from .config import ConfigError, TrainerConfig, dump_flat, load_config
from .data import FormatError, gen_synthetic, load_dataset, save_idx
from .trainer import InvariantViolation, evaluate, run_ablation, run_epsilon_sweep, train

log = logging.getLogger("uada")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(args) -> TrainerConfig:
    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    return load_config(args.config, overrides)


def _out(args, default: str) -> Path:
    return Path(args.out if args.out is not None else default)


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args, "runs/train")
    report = train(cfg, out, workers=args.workers)
    last = report.epochs[-1]
    print(f"final test accuracy {last.test_acc:.4f} (loss {last.test_loss:.4f}) after "
          f"{len(report.epochs)} epochs; reports in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    _, test_set = load_dataset(cfg.data)
    accuracy, mean_loss = evaluate(model, test_set)
    print(f"test accuracy {accuracy:.4f} mean loss {mean_loss:.6f} on {len(test_set)} samples")
    if args.out is not None:
        payload = {"checkpoint": str(args.checkpoint), "accuracy": accuracy, "mean_loss": mean_loss,
                   "samples": len(test_set), "model_checksum": model.checksum()}
        atomic_write_bytes(Path(args.out) / "eval.json",
                           (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())
    return EXIT_OK


def _print_comparison(result, out: Path):
    print(result.format_table())
    print(f"aggregate CSVs in {out}")


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args, "runs/sweep-epsilon")
    result = run_epsilon_sweep(cfg, args.epsilons, args.seeds, out, workers=args.workers)
    _print_comparison(result, out)
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = _config(args)
    out = _out(args, "runs/ablation")
    result = run_ablation(cfg, args.strategies.split(","), args.seeds, out, workers=args.workers)
    _print_comparison(result, out)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .oracle import run_all

    results = run_all(args.instances, args.batches)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    if cfg.data.source != "synthetic":
        raise UsageError("gen-data writes the synthetic dataset; set data.source=synthetic")
    out = _out(args, "data")
    flat = cfg.to_flat()
    for split in ("train", "test"):
        d = gen_synthetic(cfg.data, split)
        images, labels = out / f"{split}-images.idx", out / f"{split}-labels.idx"
        save_idx(d, images, labels)
        flat[f"data.{split}_paths"] = (str(images), str(labels))
        print(f"{split}: {len(d)} samples -> {images}, {labels} (checksum {d.checksum()})")
    flat["data.source"] = "idx"
    atomic_write_bytes(out / "config.txt", dump_flat(flat).encode())
    print(f"config for training from these files: {out / 'config.txt'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key=value config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append",
                        help="override one config key; repeatable, applied after the file")
    common.add_argument("--seed", type=int, metavar="INT", help="shorthand for --set train.seed=INT")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--workers", type=int, metavar="INT", default=os.cpu_count() or 1,
                        help="worker threads for candidate evaluation (default: logical CPUs)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")

    parser = argparse.ArgumentParser(prog="uada", description="Universal adaptive data augmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-epsilon", parents=[common], help="baseline plus one row per epsilon")
    p.add_argument("--epsilons", type=_int_list, default=[1, 2, 3])
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablation", parents=[common], help="compare update strategies")
    p.add_argument("--strategies", default="maximize,minimize,random,none")
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("oracle-check", parents=[common], help="self-check gradients and selection")
    p.add_argument("--instances", type=int, default=50, help="brute-force selection instances")
    p.add_argument("--batches", type=int, default=100, help="batches for the non-decrease replay")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset as IDX files")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("uada: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"uada: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (nn.TrainingAborted, InvariantViolation, CheckpointError, FormatError, OSError,
            ValueError) as exc:
        print(f"uada: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
