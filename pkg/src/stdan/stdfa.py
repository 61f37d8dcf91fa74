"""Spatial-temporal deformable feature aggregation.

For every target feature F_i and every other feature F_j the module samples
k*k deformably displaced points of K_j around each position, keeps the T most
relevant ones, mixes them with a softmax, and finally fuses the per-source
results with a softmax over j before a residual linear projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Scope, Var, ops
from .config import ModelConfig
from .feat_extract import split_frames
from .params import ParamSpec, conv_specs, linear_specs
from .sampling import sample_coords


@dataclass
class Selection:
    """Top-T choice for one (i, j) pair; arrays are shaped (n, T, h, w)."""

    indices: np.ndarray
    sample_x: np.ndarray
    sample_y: np.ndarray
    weights: np.ndarray


SelectionProbe = Callable[[int, int, Selection, np.ndarray], None]


def stdfa_specs(cfg: ModelConfig) -> list[ParamSpec]:
    if cfg.aggregation == "none":
        return []
    c, ce, k = cfg.channels, cfg.embed_channels, cfg.stdfa_kernel
    specs = linear_specs("stdfa.q", c, ce) + linear_specs("stdfa.k", c, ce) + linear_specs("stdfa.v", c, ce)
    if cfg.aggregation == "deformable":
        specs += conv_specs("stdfa.og1", 2 * ce, ce, k)
        specs += conv_specs("stdfa.og2", ce, 2 * k * k, k, init="zeros")
    specs += linear_specs("stdfa.out", ce, c, init="zeros")
    return specs


def predict_offsets(q_i: Var, k_j: Var, p: Scope, cfg: ModelConfig) -> Var:
    """Offset field (n, 2k^2, h, w) from the concatenated embeddings [Q_i, K_j]."""
    if q_i.shape != k_j.shape:
        raise ValueError(f"offset head inputs differ in shape: {q_i.shape} vs {k_j.shape}")
    pad = cfg.stdfa_kernel // 2
    hidden = ops.leaky_relu(
        ops.conv2d(ops.concat([q_i, k_j], axis=1), p["og1.weight"], p["og1.bias"], padding=pad), cfg.leaky_slope
    )
    return ops.conv2d(hidden, p["og2.weight"], p["og2.bias"], padding=pad)


def _dot(q: Var, samples: Var, scaled: bool) -> Var:
    n, c = q.shape[:2]
    if samples.ndim == 5:
        q = q.reshape(n, c, 1, *q.shape[2:])
    s = ops.sum(q * samples, axis=1)
    return ops.scale(s, c**-0.5) if scaled else s


def relevance_scores(q_i: Var, k_samples: Var, scaled: bool = False) -> Var:
    """Q_i(p_o) . K_j(p_o + p_xi + dp_xi) for every xi: (n, k^2, h, w)."""
    return _dot(q_i, k_samples, scaled)


def select_top_t(scores: np.ndarray, t: int, axis: int = 0) -> np.ndarray:
    """Indices of the ``t`` largest scores along ``axis``, ties going to the smaller index."""
    scores = np.asarray(scores)
    size = scores.shape[axis]
    if not 1 <= t <= size:
        raise ValueError(f"cannot select {t} of {size} points")
    order = np.argsort(-scores, axis=axis, kind="stable")
    return np.take(order, np.arange(t), axis=axis)


def spatial_aggregate(q_i: Var, k_j: Var, v_j: Var, offsets: Var | None, cfg: ModelConfig):
    """Returns (K_{j->i}, V_{j->i}, W_{j->i}, Selection, all k^2 scores)."""
    k, t = cfg.stdfa_kernel, cfg.stdfa_top_t
    n, ce = q_i.shape[:2]
    px, py = sample_coords(offsets, k, q_i.shape)
    k_samples = ops.bilinear_gather(k_j, px, py)  # (n, ce, k^2, h, w)
    scores = relevance_scores(q_i, k_samples, cfg.scaled_scores)
    idx = select_top_t(scores.value, t, axis=1)  # (n, T, h, w)
    w = ops.softmax(ops.take_along_axis(scores, idx, axis=1), axis=1)
    wk = w.reshape(n, 1, *w.shape[1:])
    idx5 = np.broadcast_to(idx[:, None], (n, ce) + idx.shape[1:])
    k_ji = ops.sum(wk * ops.take_along_axis(k_samples, idx5, axis=2), axis=2)
    sx = ops.take_along_axis(px, idx, axis=1) if isinstance(px, Var) else np.take_along_axis(px, idx, axis=1)
    sy = ops.take_along_axis(py, idx, axis=1) if isinstance(py, Var) else np.take_along_axis(py, idx, axis=1)
    v_ji = ops.sum(wk * ops.bilinear_gather(v_j, sx, sy), axis=2)
    w_ji = _dot(q_i, k_ji, cfg.scaled_scores)
    sel = Selection(
        idx,
        sx.value if isinstance(sx, Var) else sx,
        sy.value if isinstance(sy, Var) else sy,
        w.value,
    )
    return k_ji, v_ji, w_ji, sel, scores.value


def temporal_aggregate(weights: list[Var], values: list[Var]) -> Var:
    """V*_i = sum_j softmax_j(W_{j->i}) V_{j->i}; inputs listed in ascending j."""
    if not weights:
        raise ValueError("temporal aggregation needs at least one source frame")
    if len(weights) != len(values):
        raise ValueError("one weight map per value map is required")
    w_hat = ops.softmax(ops.stack(weights, axis=1), axis=1)  # (n, S, h, w)
    n, s = w_hat.shape[:2]
    v = ops.stack(values, axis=1)  # (n, S, ce, h, w)
    return ops.sum(w_hat.reshape(n, s, 1, *w_hat.shape[2:]) * v, axis=1)


def stdfa_forward(features: list[Var], p: Scope, cfg: ModelConfig, probe: SelectionProbe | None = None) -> list[Var]:
    """F*_i = F_i + out(V*_i) for every frame feature."""
    count = len(features)
    if count < 2:
        raise ValueError("aggregation needs at least two frame features")
    shape = features[0].shape
    if any(f.shape != shape for f in features):
        raise ValueError("all frame features must share one shape")
    sp = p.sub("stdfa")
    stacked = ops.concat(features, axis=0)
    q = split_frames(ops.linear(stacked, sp["q.weight"], sp["q.bias"]), count)
    k = split_frames(ops.linear(stacked, sp["k.weight"], sp["k.bias"]), count)
    v = split_frames(ops.linear(stacked, sp["v.weight"], sp["v.bias"]), count)
    deformable = cfg.aggregation == "deformable"
    enhanced = []
    for i in range(count):
        w_maps, v_maps = [], []
        for j in range(count):
            if j == i:
                continue
            offsets = predict_offsets(q[i], k[j], sp, cfg) if deformable else None
            _, v_ji, w_ji, sel, scores = spatial_aggregate(q[i], k[j], v[j], offsets, cfg)
            if probe is not None:
                probe(i, j, sel, scores)
            w_maps.append(w_ji)
            v_maps.append(v_ji)
        v_star = temporal_aggregate(w_maps, v_maps)
        enhanced.append(features[i] + ops.linear(v_star, sp["out.weight"], sp["out.bias"]))
    return enhanced
