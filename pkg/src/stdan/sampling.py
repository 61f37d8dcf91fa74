"""Kernel sampling grids and deformable convolution."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .autodiff import Var, ops


@lru_cache(maxsize=64)
def kernel_offsets(k: int) -> np.ndarray:
    """(k*k, 2) integer (dx, dy) offsets of a k x k kernel, row-major over (dy, dx)."""
    r = k // 2
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()], axis=1)


def base_grid(k: int, h: int, w: int, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Undisplaced sample coordinates p_o + p_xi, each of shape (1, k*k, h, w)."""
    off = kernel_offsets(k)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    gx = xs[None] + off[:, 0, None, None]
    gy = ys[None] + off[:, 1, None, None]
    return gx[None].astype(dtype), gy[None].astype(dtype)


def sample_coords(offsets: Var | None, k: int, shape) -> tuple:
    """Absolute sample coordinates; ``offsets`` has 2k^2 channels ordered (dx_0, dy_0, dx_1, ...)."""
    n, _, h, w = shape
    gx, gy = base_grid(k, h, w)
    if offsets is None:
        return np.broadcast_to(gx, (n,) + gx.shape[1:]).copy(), np.broadcast_to(gy, (n,) + gy.shape[1:]).copy()
    if offsets.shape[1] != 2 * k * k:
        raise ValueError(f"offset field needs {2 * k * k} channels, got {offsets.shape[1]}")
    return offsets[:, 0::2] + gx.astype(offsets.dtype), offsets[:, 1::2] + gy.astype(offsets.dtype)


def deform_conv2d(x: Var, offsets: Var | None, weight: Var, bias: Var | None = None, mask: Var | None = None) -> Var:
    """Deformable k x k convolution: bilinear samples at grid + offsets, weighted by ``weight``.

    Border handling is clamp-to-edge, so zero offsets reproduce a replicate-padded conv2d.
    """
    n, c, h, w = x.shape
    c_out, c_in, k, _ = weight.shape
    if c_in != c:
        raise ValueError(f"deformable conv weight expects {c_in} channels, got {c}")
    kk = k * k
    px, py = sample_coords(offsets, k, x.shape)
    samples = ops.bilinear_gather(x, px, py)  # (n, c, kk, h, w)
    if mask is not None:
        samples = samples * mask.reshape(n, 1, kk, h, w)
    out = ops.matmul(weight.reshape(c_out, c * kk), samples.reshape(n, c * kk, h * w))
    out = out.reshape(n, c_out, h, w)
    if bias is not None:
        out = out + bias.reshape(1, c_out, 1, 1)
    return out
