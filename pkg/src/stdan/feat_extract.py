"""Shallow convolution and residual Swin-style transformer blocks (STB / RSTB)."""

from __future__ import annotations

import numpy as np

from .autodiff import Scope, Var, ops
from .config import ModelConfig
from .params import ParamSpec, conv_specs, linear_specs, norm_specs

MASK_FILL = -100.0


# ---------------------------------------------------------------- parameters


def stb_specs(prefix: str, cfg: ModelConfig) -> list[ParamSpec]:
    c = cfg.channels
    hidden = int(round(c * cfg.mlp_ratio))
    specs = norm_specs(f"{prefix}.norm1", c)
    specs += linear_specs(f"{prefix}.attn.qkv", c, 3 * c)
    specs += linear_specs(f"{prefix}.attn.proj", c, c)
    if cfg.relative_position_bias:
        specs.append(ParamSpec(f"{prefix}.attn.rel_pos", (cfg.num_heads, (2 * cfg.window_size - 1) ** 2), "zeros"))
    specs += norm_specs(f"{prefix}.norm2", c)
    specs += linear_specs(f"{prefix}.mlp.fc1", c, hidden)
    specs += linear_specs(f"{prefix}.mlp.fc2", hidden, c)
    return specs


def rstb_specs(prefix: str, cfg: ModelConfig) -> list[ParamSpec]:
    specs = []
    for j in range(cfg.stbs_per_rstb):
        specs += stb_specs(f"{prefix}.stb{j}", cfg)
    return specs + conv_specs(f"{prefix}.conv", cfg.channels, cfg.channels, 3, init="zeros")


def feat_specs(cfg: ModelConfig) -> list[ParamSpec]:
    specs = conv_specs("shallow", cfg.in_channels, cfg.channels, 3)
    for i in range(cfg.m_f):
        specs += rstb_specs(f"feat.rstb{i}", cfg)
    return specs


# ---------------------------------------------------------------- windows


def _roll(x, shift: int, inverse: bool = False):
    s = shift if inverse else -shift
    if isinstance(x, Var):
        return ops.roll(x, (s, s), (2, 3))
    return np.roll(x, (s, s), (2, 3))


def window_partition(x, ws: int, shift: int = 0):
    """(n, c, h, w) -> (n * h/ws * w/ws, ws*ws, c) tokens, optionally after a cyclic roll."""
    if ws <= 0:
        raise ValueError("window size must be positive")
    n, c, h, w = x.shape
    if h % ws or w % ws:
        raise ValueError(f"feature {h}x{w} is not a multiple of window {ws}; pad first")
    if shift:
        x = _roll(x, shift)
    x = x.reshape(n, c, h // ws, ws, w // ws, ws).transpose(0, 2, 4, 3, 5, 1)
    return x.reshape(n * (h // ws) * (w // ws), ws * ws, c)


def window_reverse(windows, ws: int, n: int, h: int, w: int, shift: int = 0):
    if ws <= 0:
        raise ValueError("window size must be positive")
    c = windows.shape[-1]
    x = windows.reshape(n, h // ws, w // ws, ws, ws, c).transpose(0, 5, 1, 3, 2, 4).reshape(n, c, h, w)
    if shift:
        x = _roll(x, shift, inverse=True)
    return x


def shift_mask(h: int, w: int, ws: int, shift: int) -> np.ndarray:
    """Additive (num_windows, L, L) mask that blocks attention across rolled-in regions."""
    regions = np.zeros((1, 1, h, w))
    cuts = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    label = 0
    for hs in cuts:
        for wsl in cuts:
            regions[:, :, hs, wsl] = label
            label += 1
    ids = window_partition(regions, ws)[:, :, 0]
    diff = ids[:, :, None] != ids[:, None, :]
    return np.where(diff, MASK_FILL, 0.0)


def relative_position_index(ws: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(ws), np.arange(ws), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (ws - 1)
    return rel[0] * (2 * ws - 1) + rel[1]


def effective_shift(h: int, w: int, ws: int, shifted: bool) -> int:
    return ws // 2 if shifted and min(h, w) > ws else 0


# ---------------------------------------------------------------- blocks


def window_attention(tokens: Var, p: Scope, cfg: ModelConfig, mask: np.ndarray | None = None, batch: int = 1) -> Var:
    b, length, c = tokens.shape
    heads = cfg.num_heads
    if c % heads:
        raise ValueError(f"{c} channels cannot be split into {heads} heads")
    d = c // heads
    qkv = ops.matmul(tokens, p["qkv.weight"].transpose(1, 0)) + p["qkv.bias"]
    qkv = qkv.reshape(b, length, 3, heads, d).transpose(2, 0, 3, 1, 4)
    q = ops.scale(qkv[0], d**-0.5)
    attn = ops.matmul(q, qkv[1].transpose(0, 1, 3, 2))
    if cfg.relative_position_bias:
        ws = int(round(length**0.5))
        idx = relative_position_index(ws).ravel()
        bias = ops.index_select(p["rel_pos"], idx, axis=1).reshape(heads, length, length)
        attn = attn + bias
    if mask is not None:
        nw = mask.shape[0]
        attn = (attn.reshape(batch, nw, heads, length, length) + mask[None, :, None].astype(attn.dtype)).reshape(
            b, heads, length, length
        )
    attn = ops.softmax(attn, axis=-1)
    out = ops.matmul(attn, qkv[2]).transpose(0, 2, 1, 3).reshape(b, length, c)
    return ops.matmul(out, p["proj.weight"].transpose(1, 0)) + p["proj.bias"]


def stb_forward(x: Var, p: Scope, cfg: ModelConfig, shifted: bool = False) -> Var:
    """X = MSA(LN(X_in)) + X_in;  X_out = MLP(LN(X)) + X."""
    n, c, h, w = x.shape
    if c != cfg.channels:
        raise ValueError(f"STB expects {cfg.channels} channels, got {c}")
    ws = cfg.window_size
    shift = effective_shift(h, w, ws, shifted)
    y = ops.layer_norm(x, p["norm1.weight"], p["norm1.bias"])
    tokens = window_partition(y, ws, shift)
    mask = shift_mask(h, w, ws, shift) if shift else None
    y = window_attention(tokens, p.sub("attn"), cfg, mask, batch=n)
    x = x + window_reverse(y, ws, n, h, w, shift)
    y = ops.layer_norm(x, p["norm2.weight"], p["norm2.bias"])
    y = ops.gelu(ops.linear(y, p["mlp.fc1.weight"], p["mlp.fc1.bias"]))
    return x + ops.linear(y, p["mlp.fc2.weight"], p["mlp.fc2.bias"])


def pad_to_multiple(x: Var, m: int) -> tuple[Var, tuple[int, int]]:
    h, w = x.shape[2], x.shape[3]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        x = ops.pad2d(x, (0, ph, 0, pw), "reflect")
    return x, (h, w)


def rstb_forward(x: Var, p: Scope, cfg: ModelConfig) -> Var:
    """conv(STB_s(...STB_1(x))) + x, reflect-padding to window multiples inside."""
    y, (h, w) = pad_to_multiple(x, cfg.window_size)
    for j in range(cfg.stbs_per_rstb):
        y = stb_forward(y, p.sub(f"stb{j}"), cfg, shifted=j % 2 == 1)
    if y.shape[2:] != (h, w):
        y = y[:, :, :h, :w]
    return x + ops.conv2d(y, p["conv.weight"], p["conv.bias"], padding=1)


def _stacked(frames):
    if isinstance(frames, Var):
        return frames, None
    frames = list(frames)
    if not frames:
        raise ValueError("empty frame sequence")
    return ops.concat(frames, axis=0), len(frames)


def split_frames(x: Var, parts: int | None):
    if parts is None:
        return x
    step = x.shape[0] // parts
    return [x[i * step : (i + 1) * step] for i in range(parts)]


def extract_shallow(frames, p: Scope, cfg: ModelConfig):
    """3x3 convolution of each LR frame into ``cfg.channels`` feature maps.

    Accepts a list of (n, 3, h, w) Vars (returns a list) or one stacked Var.
    """
    x, parts = _stacked(frames)
    if x.shape[1] != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels}-channel frames, got {x.shape[1]}")
    return split_frames(ops.conv2d(x, p["shallow.weight"], p["shallow.bias"], padding=1), parts)


def extract_features(shallow, p: Scope, cfg: ModelConfig, count: int | None = None, prefix: str = "feat"):
    x, parts = _stacked(shallow)
    for i in range(cfg.m_f if count is None else count):
        x = rstb_forward(x, p.sub(f"{prefix}.rstb{i}"), cfg)
    return split_frames(x, parts)
