"""Dense rank-4 array kernels and their vector-Jacobian products.

Arrays are plain ``numpy.ndarray`` values laid out as (batch, channel, height,
width). Coordinates follow (x = column, y = row) with the origin at the
top-left pixel center. Every forward kernel here has a matching ``*_backward``
that the tape in :mod:`stdan.autodiff` composes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

PAD_MODES = ("zero", "reflect", "replicate")


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def ensure_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values produced by {where}")
    return x


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0
    pad_mode: str = "zero"

    def __post_init__(self):
        if self.pad_mode not in PAD_MODES:
            raise ValueError(f"unknown pad mode {self.pad_mode!r}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")

    @classmethod
    def from_weight(cls, weight: np.ndarray, stride=1, padding=0, pad_mode="zero"):
        c_out, c_in, kh, kw = weight.shape
        return cls(kh, kw, c_in, c_out, stride, padding, pad_mode)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        sizes = []
        for n, k in ((h, self.kernel_h), (w, self.kernel_w)):
            span = n + 2 * self.padding - k
            if span < 0 or span % self.stride:
                raise ValueError(
                    f"input extent {n} with kernel {k}, padding {self.padding} "
                    f"and stride {self.stride} gives a non-integer output size"
                )
            sizes.append(span // self.stride + 1)
        return sizes[0], sizes[1]


# ---------------------------------------------------------------- padding


def _pad_index(n: int, before: int, after: int, mode: str) -> np.ndarray:
    """Source index for every padded position (-1 marks a zero pad)."""
    idx = np.arange(n)
    if mode == "zero":
        return np.pad(idx, (before, after), constant_values=-1)
    if mode == "reflect" and n > 1:
        return np.pad(idx, (before, after), mode="reflect")
    return np.pad(idx, (before, after), mode="edge")


def _pad_matrix(n, before, after, mode, dtype):
    idx = _pad_index(n, before, after, mode)
    m = np.zeros((idx.size, n), dtype=dtype)
    rows = np.nonzero(idx >= 0)[0]
    m[rows, idx[rows]] = 1
    return m


def pad2d(x: np.ndarray, pad: tuple[int, int, int, int] | int, mode: str = "zero") -> np.ndarray:
    """Pad the two spatial axes. ``pad`` is (top, bottom, left, right) or one int."""
    top, bottom, left, right = (pad,) * 4 if isinstance(pad, int) else pad
    if not (top or bottom or left or right):
        return x
    if mode not in PAD_MODES:
        raise ValueError(f"unknown pad mode {mode!r}")
    rows = _pad_index(x.shape[2], top, bottom, mode)
    cols = _pad_index(x.shape[3], left, right, mode)
    out = x[:, :, np.maximum(rows, 0)][:, :, :, np.maximum(cols, 0)]
    if mode == "zero":
        out[:, :, rows < 0] = 0
        out[:, :, :, cols < 0] = 0
    return out


def pad2d_backward(g: np.ndarray, shape, pad, mode: str = "zero") -> np.ndarray:
    top, bottom, left, right = (pad,) * 4 if isinstance(pad, int) else pad
    if not (top or bottom or left or right):
        return g
    if mode == "zero":
        return g[:, :, top : g.shape[2] - bottom, left : g.shape[3] - right]
    pr = _pad_matrix(shape[2], top, bottom, mode, g.dtype)
    pc = _pad_matrix(shape[3], left, right, mode, g.dtype)
    return np.einsum("ph,ncpq,qw->nchw", pr, g, pc, optimize=True)


# ---------------------------------------------------------------- conv2d


def _im2col(xp, kh, kw, stride, oh, ow):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    n, c = xp.shape[:2]
    # (n, oh, ow, c, kh, kw): channel-major, then kernel rows, then columns
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def conv2d(x, weight, bias=None, stride=1, padding=0, pad_mode="zero"):
    """2-D cross-correlation of ``x`` (n, c_in, h, w) with ``weight`` (c_out, c_in, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects rank-4 input and weight")
    spec = ConvSpec.from_weight(weight, stride, padding, pad_mode)
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {spec.in_channels}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {bias.shape} does not match {spec.out_channels} outputs")
    oh, ow = spec.output_size(x.shape[2], x.shape[3])
    n = x.shape[0]
    xp = pad2d(x, padding, pad_mode)
    cols = _im2col(xp, spec.kernel_h, spec.kernel_w, stride, oh, ow)
    out = cols @ weight.reshape(spec.out_channels, -1).T
    if bias is not None:
        out += bias
    return np.ascontiguousarray(out.reshape(n, oh, ow, spec.out_channels).transpose(0, 3, 1, 2))


def conv2d_backward(g, x, weight, stride=1, padding=0, pad_mode="zero", need_x=True):
    """Gradients (dx, dweight, dbias) of :func:`conv2d` for upstream ``g``."""
    c_out, c_in, kh, kw = weight.shape
    n, _, oh, ow = g.shape
    xp = pad2d(x, padding, pad_mode)
    gm = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    gw = (gm.T @ cols).reshape(weight.shape)
    gb = g.sum(axis=(0, 2, 3))
    gx = None
    if need_x:
        dcols = (gm @ weight.reshape(c_out, -1)).reshape(n, oh, ow, c_in, kh, kw)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = pad2d_backward(gxp, x.shape, padding, pad_mode)
    return gx, gw, gb


# ---------------------------------------------------------------- linear


def linear(x, weight, bias=None):
    """Per-pixel channel map: out[n, :, h, w] = weight @ x[n, :, h, w] + bias."""
    if weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear weight {weight.shape} does not accept {x.shape[1]} channels")
    out = np.tensordot(weight, x, axes=([1], [1])).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def linear_backward(g, x, weight):
    gx = np.tensordot(weight, g, axes=([0], [1])).transpose(1, 0, 2, 3)
    gw = np.tensordot(g, x, axes=([0, 2, 3], [0, 2, 3]))
    gb = g.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gx), gw, gb


# ---------------------------------------------------------------- layer norm


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the channel axis at every (n, h, w) location."""
    c = x.shape[1]
    if c == 0:
        raise ValueError("layer_norm needs at least one channel")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("gamma and beta must have one entry per channel")
    out, _ = _layer_norm_stats(x, eps)
    return out * gamma[None, :, None, None] + beta[None, :, None, None]


def _layer_norm_stats(x, eps):
    x64 = x.astype(np.float64, copy=False)
    mean = x64.mean(axis=1, keepdims=True)
    centered = x64 - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (centered * inv).astype(x.dtype, copy=False), inv.astype(x.dtype, copy=False)


def layer_norm_backward(g, x, gamma, eps=1e-5):
    xhat, inv = _layer_norm_stats(x, eps)
    gxhat = g * gamma[None, :, None, None]
    gx = inv * (
        gxhat - gxhat.mean(axis=1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
    )
    ggamma = (g * xhat).sum(axis=(0, 2, 3))
    gbeta = g.sum(axis=(0, 2, 3))
    return gx, ggamma, gbeta


# ---------------------------------------------------------------- softmax & activations


def softmax(x, axis=-1):
    x = np.asarray(x)
    if x.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(g, y, axis=-1):
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


def leaky_relu(x, slope=0.1):
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(g, x, slope=0.1):
    return np.where(x >= 0, g, slope * g)


_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)  # python floats keep float32 inputs in float32


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_backward(g, x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) / _SQRT2PI
    return g * (cdf + x * pdf)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------- bilinear sampling


def bilinear_sample(x: np.ndarray, px: float, py: float, channel: int = 0, batch: int = 0) -> float:
    """Read one value at continuous (px, py), clamping coordinates to the border."""
    h, w = x.shape[2], x.shape[3]
    cx = min(max(float(px), 0.0), w - 1.0)
    cy = min(max(float(py), 0.0), h - 1.0)
    x0, y0 = int(np.floor(cx)), int(np.floor(cy))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = cx - x0, cy - y0
    img = x[batch, channel]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return float(top * (1 - fy) + bottom * fy)


def _corners(coord, size):
    c = np.clip(coord, 0, size - 1)
    if size == 1:
        i0 = np.zeros(c.shape, dtype=np.intp)
        return i0, i0, np.zeros_like(c)
    i0 = np.minimum(np.floor(c).astype(np.intp), size - 2)
    return i0, i0 + 1, (c - i0).astype(c.dtype, copy=False)


def _gather(xf, flat):
    n, c = xf.shape[:2]
    idx = flat.reshape(n, 1, -1)
    return np.take_along_axis(xf, np.broadcast_to(idx, (n, c, idx.shape[2])), axis=2)


def bilinear_gather(x, px, py):
    """Sample ``x`` (n, c, h, w) at coordinate arrays ``px``, ``py`` of shape (n, *s).

    Returns an array of shape (n, c, *s). Out-of-range coordinates clamp to the border.
    """
    n, c, h, w = x.shape
    if px.shape != py.shape or px.shape[0] != n:
        raise ValueError("coordinate arrays must share shape (n, ...)")
    x0, x1, fx = _corners(px, w)
    y0, y1, fy = _corners(py, h)
    xf = x.reshape(n, c, h * w)
    fx = fx.reshape(n, 1, -1)
    fy = fy.reshape(n, 1, -1)
    v00 = _gather(xf, y0 * w + x0)
    v01 = _gather(xf, y0 * w + x1)
    v10 = _gather(xf, y1 * w + x0)
    v11 = _gather(xf, y1 * w + x1)
    top = v00 * (1 - fx) + v01 * fx
    bottom = v10 * (1 - fx) + v11 * fx
    out = top * (1 - fy) + bottom * fy
    return out.reshape((n, c) + px.shape[1:])


def bilinear_gather_backward(g, x, px, py, need_x=True, need_coords=True):
    """Gradients (dx, dpx, dpy) of :func:`bilinear_gather`."""
    n, c, h, w = x.shape
    m = px[0].size
    x0, x1, fx = _corners(px, w)
    y0, y1, fy = _corners(py, h)
    gf = g.reshape(n, c, m)
    fx = fx.reshape(n, 1, m)
    fy = fy.reshape(n, 1, m)
    gx = gpx = gpy = None
    if need_x:
        base = (np.arange(n * c) * (h * w)).reshape(n, c, 1)
        total = np.zeros(n * c * h * w, dtype=np.float64)
        for yi, xi, wt in (
            (y0, x0, (1 - fy) * (1 - fx)),
            (y0, x1, (1 - fy) * fx),
            (y1, x0, fy * (1 - fx)),
            (y1, x1, fy * fx),
        ):
            lin = base + (yi * w + xi).reshape(n, 1, m)
            total += np.bincount(lin.ravel(), weights=(gf * wt).ravel(), minlength=total.size)
        gx = total.reshape(x.shape).astype(g.dtype, copy=False)
    if need_coords:
        xf = x.reshape(n, c, h * w)
        v00 = _gather(xf, y0 * w + x0)
        v01 = _gather(xf, y0 * w + x1)
        v10 = _gather(xf, y1 * w + x0)
        v11 = _gather(xf, y1 * w + x1)
        dvdx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
        dvdy = (1 - fx) * (v10 - v00) + fx * (v11 - v01)
        inx = ((px >= 0) & (px <= w - 1)).reshape(n, m) if w > 1 else np.zeros((n, m), bool)
        iny = ((py >= 0) & (py <= h - 1)).reshape(n, m) if h > 1 else np.zeros((n, m), bool)
        gpx = ((gf * dvdx).sum(axis=1) * inx).reshape(px.shape)
        gpy = ((gf * dvdy).sum(axis=1) * iny).reshape(py.shape)
    return gx, gpx, gpy


# ---------------------------------------------------------------- pixel shuffle


def pixel_shuffle(x, r):
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"pixel_shuffle needs channels divisible by {r * r}, got {c}")
    out = x.reshape(n, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out).reshape(n, c // (r * r), h * r, w * r)


def pixel_unshuffle(x, r):
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"pixel_unshuffle needs spatial dims divisible by {r}")
    out = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out).reshape(n, c * r * r, h // r, w // r)
