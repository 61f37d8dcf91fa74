"""Adam with cosine-annealed learning rate and the toy end-to-end training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, ops
from .config import RunConfig
from .data_io import FrameSequence, degrade, read_sequence
from .params import ModelParams
from .reconstruct import charbonnier_loss, init_params, stdan_graph
from .tensor import NonFiniteError

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step


def cosine_lr(step: int, total: int, lr_max: float = 2e-4, lr_min: float = 1e-7) -> float:
    if total <= 0:
        raise ValueError("total steps must be positive")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total))


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            0,
            beta1,
            beta2,
            eps,
        )


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptimState, lr: float):
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter is {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params, state


@dataclass
class TrainingSample:
    lr: list[np.ndarray]  # (3, h, w) each
    gt: list[np.ndarray]  # (3, 4h, 4w) each


def load_training_data(directory) -> list[TrainingSample]:
    """A sequence directory holds ``gt/`` and optionally ``lr/``; a parent may hold several."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory not found: {root}")
    seq_dirs = [root] if (root / "gt").is_dir() else sorted(d for d in root.iterdir() if (d / "gt").is_dir())
    if not seq_dirs:
        raise FileNotFoundError(f"no gt/ frame directories under {root}")
    samples = []
    for d in seq_dirs:
        gt = read_sequence(d / "gt")
        lr = read_sequence(d / "lr", "lr").frames if (d / "lr").is_dir() else degrade(gt).frames
        samples.append(TrainingSample(lr, gt.frames))
    return samples


def sample_from_sequence(gt: FrameSequence) -> TrainingSample:
    return TrainingSample(degrade(gt).frames, gt.frames)


def random_crop(sample: TrainingSample, crop: int, rng: np.random.Generator, augment: bool = True, scale: int = 4):
    """Aligned LR/GT crops (GT window = scale x LR window) with flip / 90-degree augmentation."""
    h, w = sample.lr[0].shape[1:]
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} is larger than the {h}x{w} LR frames")
    y = int(rng.integers(0, h - crop + 1))
    x = int(rng.integers(0, w - crop + 1))
    lr = [f[:, y : y + crop, x : x + crop] for f in sample.lr]
    gt = [f[:, scale * y : scale * (y + crop), scale * x : scale * (x + crop)] for f in sample.gt]
    if augment:
        flip = bool(rng.integers(0, 2))
        rot = int(rng.integers(0, 4))
        lr = [_augment(f, flip, rot) for f in lr]
        gt = [_augment(f, flip, rot) for f in gt]
    return lr, gt


def _augment(f, flip, rot):
    if flip:
        f = f[:, :, ::-1]
    return np.ascontiguousarray(np.rot90(f, rot, axes=(1, 2)))


def loss_and_grads(params: ModelParams, lr_frames, gt_frames, cfg):
    """Charbonnier loss averaged over all 2N-1 output frames, and its parameter gradients."""
    tape = Tape(params)
    frames = [tape.constant(f[None].astype(cfg.dtype)) for f in lr_frames]
    out = stdan_graph(frames, tape.scope(), cfg)
    target = np.stack(gt_frames).astype(cfg.dtype)
    loss = charbonnier_loss(ops.concat(out, axis=0), target, cfg.charbonnier_eps)
    tape.backward(loss)
    return float(loss.value), tape.param_grads()


@dataclass
class TrainResult:
    params: ModelParams
    history: list[tuple[int, float, float]]


def train_loop(data: list[TrainingSample], run: RunConfig, steps: int | None = None, seed: int | None = None) -> TrainResult:
    if not data:
        raise ValueError("no training data")
    steps = run.steps if steps is None else steps
    seed = run.seed if seed is None else seed
    cfg = run.model
    params = init_params(cfg, seed)
    state = OptimState.for_params(params, run.beta1, run.beta2, run.adam_eps)
    rng = np.random.default_rng([seed, 1])
    history = []
    for step in range(steps):
        sample = data[int(rng.integers(0, len(data)))]
        lr_frames, gt_frames = random_crop(sample, run.crop_size, rng, run.augment, cfg.scale)
        try:
            loss, grads = loss_and_grads(params, lr_frames, gt_frames, cfg)
        except NonFiniteError as exc:
            raise TrainingDiverged(step, float("nan")) from exc
        if not math.isfinite(loss):
            raise TrainingDiverged(step, loss)
        lr = cosine_lr(step, steps, run.lr_max, run.lr_min)
        adam_step(params, grads, state, lr)
        history.append((step, lr, loss))
        log.info("step %d lr %.3e loss %.6f", step, lr, loss)
    return TrainResult(params, history)


def write_loss_csv(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in history:
            writer.writerow([step, repr(lr), repr(loss)])
