"""Long-short term feature interpolation: DFI blocks, LSTC steps and the bidirectional scan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Scope, Var, ops
from .config import ModelConfig
from .params import ParamSpec, conv_specs
from .sampling import deform_conv2d

DFI_KERNEL = 3


def dfi_specs(prefix: str, cfg: ModelConfig) -> list[ParamSpec]:
    c, kk = cfg.channels, DFI_KERNEL * DFI_KERNEL
    specs = conv_specs(f"{prefix}.og1", 2 * c, c, 3)
    specs += conv_specs(f"{prefix}.og2", c, 2 * kk, 3, init="zeros")
    if cfg.dcn_modulation:
        specs += conv_specs(f"{prefix}.mask", c, kk, 3, init="zeros")
    specs += conv_specs(f"{prefix}.dconv", c, c, DFI_KERNEL)
    return specs


def lstc_specs(prefix: str, cfg: ModelConfig) -> list[ParamSpec]:
    c = cfg.channels
    specs = dfi_specs(f"{prefix}.align_prev", cfg) + dfi_specs(f"{prefix}.align_next", cfg)
    specs += conv_specs(f"{prefix}.blend", 2 * c, c, 1)
    if cfg.long_term:
        specs += dfi_specs(f"{prefix}.align_hidden", cfg)
        specs += conv_specs(f"{prefix}.fusion", 2 * c, c, 1, init="fuse_identity")
        specs += conv_specs(f"{prefix}.hidden", c, c, 3)
    return specs


def lstfi_specs(cfg: ModelConfig) -> list[ParamSpec]:
    specs = lstc_specs("lstfi.fwd", cfg)
    if cfg.long_term:
        specs += lstc_specs("lstfi.bwd", cfg)
        specs += conv_specs("lstfi.fuse", 2 * cfg.channels, cfg.channels, 1, init="fuse_average")
    return specs


def dfi_offsets(src: Var, ref: Var, p: Scope, cfg: ModelConfig) -> tuple[Var, Var | None]:
    hidden = ops.leaky_relu(
        ops.conv2d(ops.concat([src, ref], axis=1), p["og1.weight"], p["og1.bias"], padding=1), cfg.leaky_slope
    )
    offsets = ops.conv2d(hidden, p["og2.weight"], p["og2.bias"], padding=1)
    mask = None
    if cfg.dcn_modulation:
        mask = ops.sigmoid(ops.conv2d(hidden, p["mask.weight"], p["mask.bias"], padding=1))
    return offsets, mask


def dfi_block(src: Var, ref: Var, p: Scope, cfg: ModelConfig) -> Var:
    """Warp ``src`` toward ``ref``'s time: offsets from [src, ref], then deformable conv of src."""
    if src.shape != ref.shape:
        raise ValueError(f"dfi_block shape mismatch {src.shape} vs {ref.shape}")
    offsets, mask = dfi_offsets(src, ref, p, cfg)
    return deform_conv2d(src, offsets, p["dconv.weight"], p["dconv.bias"], mask)


@dataclass
class LstcState:
    hidden: Var
    direction: str = "forward"


def zero_state(like: Var, direction: str = "forward") -> LstcState:
    return LstcState(like.tape.constant(np.zeros(like.shape, dtype=like.dtype)), direction)


def short_term(f_prev: Var, f_next: Var, p: Scope, cfg: ModelConfig) -> Var:
    """F^p: 1x1 blend of both neighbours after deformable motion compensation."""
    a = dfi_block(f_prev, f_next, p.sub("align_prev"), cfg)
    b = dfi_block(f_next, f_prev, p.sub("align_next"), cfg)
    return ops.conv2d(ops.concat([a, b], axis=1), p["blend.weight"], p["blend.bias"])


def lstc_step(f_prev: Var, f_next: Var, state: LstcState | None, p: Scope, cfg: ModelConfig):
    """One LSTC step; returns (directional intermediate feature, new state).

    With ``state=None`` (short-term variants) the hidden path is skipped and
    the returned state is None.
    """
    fp = short_term(f_prev, f_next, p, cfg)
    if state is None:
        return fp, None
    if state.hidden.shape != fp.shape:
        raise ValueError(f"hidden state shape {state.hidden.shape} does not match features {fp.shape}")
    aligned = dfi_block(state.hidden, fp, p.sub("align_hidden"), cfg)
    fd = ops.conv2d(ops.concat([fp, aligned], axis=1), p["fusion.weight"], p["fusion.bias"])
    h = ops.leaky_relu(ops.conv2d(fd, p["hidden.weight"], p["hidden.bias"], padding=1), cfg.leaky_slope)
    return fd, LstcState(h, state.direction)


def interpolate_sequence(features: list[Var], p: Scope, cfg: ModelConfig) -> list[Var]:
    """N input-frame features -> 2N-1 features; input times pass through unchanged."""
    n = len(features)
    if n < 2:
        raise ValueError(f"interpolation needs at least 2 frames, got {n}")
    lp = p.sub("lstfi")
    if not cfg.long_term:
        mids = [lstc_step(features[t], features[t + 1], None, lp.sub("fwd"), cfg)[0] for t in range(n - 1)]
    else:
        fwd = []
        state = zero_state(features[0], "forward")
        for t in range(n - 1):
            f, state = lstc_step(features[t], features[t + 1], state, lp.sub("fwd"), cfg)
            fwd.append(f)
        bwd: list = [None] * (n - 1)
        state = zero_state(features[0], "backward")
        for t in range(n - 2, -1, -1):
            bwd[t], state = lstc_step(features[t + 1], features[t], state, lp.sub("bwd"), cfg)
        mids = [
            ops.conv2d(ops.concat([f, b], axis=1), lp["fuse.weight"], lp["fuse.bias"]) for f, b in zip(fwd, bwd)
        ]
    out = []
    for t in range(n):
        out.append(features[t])
        if t < n - 1:
            out.append(mids[t])
    return out
