"""Command-line entry point: ``stdan synth|train|infer|gradcheck|eval``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import VARIANTS, RunConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2



class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(args) -> int:
    env = os.environ.get("STDAN_SEED")
    if env is None or env == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"STDAN_SEED must be an integer, got {env!r}") from None


def _run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return RunConfig.load(path)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None


def sidecar_path(weights) -> Path:
    """Run config stored next to a weight file so inference rebuilds the same model."""
    return Path(str(weights) + ".json")


def loss_csv_path(weights) -> Path:
    return Path(weights).with_suffix(".loss.csv")


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    from .data_io import degrade, parse_motion, synth_sequence, write_sequence

    if args.frames < 3 or args.frames % 2 == 0:
        raise UsageError(f"--frames must be an odd number >= 3, got {args.frames}")
    if args.size < 4 or args.size % 4:
        raise UsageError(f"--size must be a positive multiple of 4, got {args.size}")
    try:
        motion = parse_motion(args.motion)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = _seed(args)
    gt = synth_sequence(seed, args.frames, args.size, motion)
    lr = degrade(gt)
    out = Path(args.out)
    write_sequence(out / "gt", gt)
    write_sequence(out / "lr", lr)
    print(f"seed {seed}: {len(gt)} GT frames {args.size}x{args.size} -> {out / 'gt'}")
    print(f"         {len(lr)} LR frames {args.size // 4}x{args.size // 4} -> {out / 'lr'}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    from .data_io import save_weights
    from .params import count_params
    from .train import load_training_data, train_loop, write_loss_csv

    run = _run_config(args.config)
    if args.steps is not None:
        if args.steps < 0:
            raise UsageError("--steps must be non-negative")
        run = dataclasses.replace(run, steps=args.steps)
    seed = _seed(args)
    run = dataclasses.replace(run, seed=seed)
    data = load_training_data(args.data)
    start = time.perf_counter()
    result = train_loop(data, run)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(out, result.params)
    sidecar_path(out).write_text(run.to_json(), encoding="utf-8")
    csv_path = loss_csv_path(out)
    write_loss_csv(csv_path, result.history)
    print(f"trained {run.steps} steps ({count_params(result.params)} parameters) in {time.perf_counter() - start:.1f}s")
    if result.history:
        print(f"loss {result.history[0][2]:.6f} -> {result.history[-1][2]:.6f}")
    print(f"weights -> {out}\nloss log -> {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------- infer


def _lr_dir(path: Path) -> Path:
    return path / "lr" if (path / "lr").is_dir() else path


def write_offset_dump(path, records) -> None:
    """One row per (target, source, position, selected point)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame_i", "frame_j", "x", "y", "xi", "sample_x", "sample_y", "weight"])
        for i, j, sel in records:
            _, t, h, w = sel.indices.shape
            for y in range(h):
                for x in range(w):
                    for r in range(t):
                        writer.writerow(
                            [
                                i + 1,
                                j + 1,
                                x,
                                y,
                                int(sel.indices[0, r, y, x]),
                                f"{sel.sample_x[0, r, y, x]:.6f}",
                                f"{sel.sample_y[0, r, y, x]:.6f}",
                                f"{sel.weights[0, r, y, x]:.6f}",
                            ]
                        )


def cmd_infer(args) -> int:
    from .data_io import FrameSequence, load_weights, read_sequence, write_sequence
    from .reconstruct import model_specs, stdan_forward

    weights = Path(args.weights)
    if args.config is not None:
        run = _run_config(args.config)
    elif sidecar_path(weights).is_file():
        run = _run_config(sidecar_path(weights))
    else:
        run = RunConfig()
    cfg = run.model if args.variant is None else run.model.with_variant(args.variant)
    if args.dump_offsets and cfg.aggregation == "none":
        raise UsageError(f"--dump-offsets needs an aggregation module; variant {cfg.variant} has none")
    if not weights.is_file():
        raise FileNotFoundError(f"weight file not found: {weights}")
    params = load_weights(weights, model_specs(cfg), cfg.dtype, allow_extra=args.variant is not None)
    lr = read_sequence(_lr_dir(Path(args.inp)), "lr")
    if len(lr) < 2:
        raise ValueError(f"inference needs at least 2 LR frames, found {len(lr)}")
    records = []
    probe = (lambda i, j, sel, scores: records.append((i, j, sel))) if args.dump_offsets else None
    start = time.perf_counter()
    out = stdan_forward(lr.batched(), params, cfg, probe)
    frames = [np.clip(f[0], 0.0, 1.0) for f in out]
    write_sequence(args.out, FrameSequence(frames))
    print(f"{len(lr)} LR frames -> {len(frames)} HR frames {frames[0].shape[1]}x{frames[0].shape[2]} "
          f"({cfg.variant}, {time.perf_counter() - start:.1f}s) -> {args.out}")
    if args.dump_offsets:
        write_offset_dump(args.dump_offsets, records)
        print(f"sampling locations -> {args.dump_offsets}")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    from .autodiff.gradcheck import OP_NAMES, gradcheck

    ops = OP_NAMES if args.op == "all" else (args.op,)
    seed = _seed(args)
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    ok = True
    for op in ops:
        for s in range(seed, seed + args.repeats):
            start = time.perf_counter()
            report = gradcheck(op, s, max_entries=args.entries)
            lines = report.lines()
            print(f"{lines[0]}  ({time.perf_counter() - start:.1f}s)")
            if args.verbose:
                print("\n".join(lines[1:]))
            ok = ok and report.passed
    print("all checks passed" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    from .data_io import read_sequence
    from .metrics import evaluate

    if args.crop_border < 0:
        raise UsageError("--crop-border must be non-negative")
    pred = read_sequence(args.pred)
    gt = read_sequence(args.gt)
    report = evaluate(pred.frames, gt.frames, args.crop_border)
    print(report.table())
    if args.csv:
        report.write_csv(args.csv)
        print(f"per-frame metrics -> {args.csv}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    from .autodiff.gradcheck import OP_NAMES

    parser = _Parser(prog="stdan", description="Space-time video super-resolution toolkit (numpy).")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads (default: all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic GT sequence and its degraded LR frames")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=7)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motion", default="2,1,0", help="per-frame dx,dy[,rotation in degrees]")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="toy end-to-end training")
    p.add_argument("--data", required=True, help="sequence directory (gt/ and lr/) or a parent of several")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="weight file (.stdw)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="LR frames -> 2N-1 HR frames")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="inp", required=True, help="LR frame directory (or a directory holding lr/)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON run config (default: the one saved with the weights)")
    p.add_argument("--variant", choices=VARIANTS, default=None)
    p.add_argument("--dump-offsets", default=None, metavar="CSV")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--op", required=True, choices=("all",) + OP_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3, help="number of consecutive seeds")
    p.add_argument("--entries", type=int, default=12, help="entries differenced per tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM of predicted vs ground-truth frames")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--crop-border", type=int, default=0)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
