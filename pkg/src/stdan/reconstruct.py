"""Deep feature mapping, x4 sub-pixel upsampling, the Charbonnier loss and the full forward pass."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Scope, Tape, Var, ops
from .config import ModelConfig
from .feat_extract import extract_features, extract_shallow, feat_specs, rstb_specs, split_frames
from .lstfi import interpolate_sequence, lstfi_specs
from .params import ModelParams, ParamSpec, conv_specs, initialize
from .stdfa import SelectionProbe, stdfa_forward, stdfa_specs


def deep_specs(cfg: ModelConfig) -> list[ParamSpec]:
    specs = []
    for i in range(cfg.m_b):
        specs += rstb_specs(f"deep.rstb{i}", cfg)
    return specs


def upsample_specs(cfg: ModelConfig) -> list[ParamSpec]:
    c = cfg.channels
    return conv_specs("up.conv1", c, 4 * c, 3) + conv_specs("up.conv2", c, 4 * c, 3) + conv_specs("up.conv3", c, 3, 3)


def model_specs(cfg: ModelConfig) -> list[ParamSpec]:
    return feat_specs(cfg) + lstfi_specs(cfg) + stdfa_specs(cfg) + deep_specs(cfg) + upsample_specs(cfg)


def init_params(cfg: ModelConfig, seed: int | None = None) -> ModelParams:
    return initialize(model_specs(cfg), cfg.seed if seed is None else seed, cfg.dtype)


def deep_features(enhanced, p: Scope, cfg: ModelConfig):
    """m_b residual Swin blocks per frame; same residual structure as feature extraction."""
    return extract_features(enhanced, p, cfg, count=cfg.m_b, prefix="deep")


def upsample_x4(f: Var, p: Scope, cfg: ModelConfig) -> Var:
    """conv(c->4c), shuffle x2, conv(c->4c), shuffle x2, conv(c->3)."""
    if f.shape[1] != cfg.channels:
        raise ValueError(f"upsampler expects {cfg.channels} channels, got {f.shape[1]}")
    up = p.sub("up")
    x = ops.pixel_shuffle(ops.conv2d(f, up["conv1.weight"], up["conv1.bias"], padding=1), 2)
    x = ops.pixel_shuffle(ops.conv2d(x, up["conv2.weight"], up["conv2.bias"], padding=1), 2)
    return ops.conv2d(x, up["conv3.weight"], up["conv3.bias"], padding=1)


def charbonnier_loss(pred, gt, eps: float = 1e-3):
    """Mean over elements of sqrt((pred - gt)^2 + eps^2). Works on arrays or Vars."""
    if isinstance(pred, Var) or isinstance(gt, Var):
        return ops.charbonnier_loss(pred, gt, eps)
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"charbonnier_loss shape mismatch {pred.shape} vs {gt.shape}")
    d = pred - gt
    r = np.sqrt(d * d + eps * eps)
    return float(eps + (d * d / (r + eps)).sum() / d.size)


def stdan_graph(frames: Sequence[Var], p: Scope, cfg: ModelConfig, probe: SelectionProbe | None = None) -> list[Var]:
    """N LR frames (each (n, 3, h, w)) -> 2N-1 HR frames (n, 3, 4h, 4w) on the frames' tape."""
    count = len(frames)
    if count < 2:
        raise ValueError(f"need at least 2 input frames, got {count}")
    n, c, h, w = frames[0].shape
    if h < 1 or w < 1:
        raise ValueError("frame dimensions must be positive")
    if any(f.shape != frames[0].shape for f in frames):
        raise ValueError("all input frames must share one shape")
    x = ops.concat(list(frames), axis=0)
    ws = cfg.window_size
    ph, pw = (-h) % ws, (-w) % ws
    if ph or pw:
        x = ops.pad2d(x, (0, ph, 0, pw), "reflect")
    feats = extract_features(extract_shallow(x, p, cfg), p, cfg)
    seq = interpolate_sequence(split_frames(feats, count), p, cfg)
    if cfg.aggregation != "none":
        seq = stdfa_forward(seq, p, cfg, probe)
    out = upsample_x4(deep_features(ops.concat(seq, axis=0), p, cfg), p, cfg)
    if ph or pw:
        out = out[:, :, : 4 * h, : 4 * w]
    return split_frames(out, 2 * count - 1)


def stdan_forward(lr_frames: Sequence[np.ndarray], params: ModelParams, cfg: ModelConfig, probe=None) -> list[np.ndarray]:
    """Inference: arrays in, arrays out, nothing recorded for backward."""
    tape = Tape(params, record=False)
    frames = [tape.constant(np.asarray(f, dtype=cfg.dtype)) for f in lr_frames]
    if frames and frames[0].ndim == 3:
        frames = [f.reshape(1, *f.shape) for f in frames]
    return [o.value for o in stdan_graph(frames, tape.scope(), cfg, probe)]
