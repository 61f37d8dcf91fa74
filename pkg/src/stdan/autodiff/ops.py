"""Differentiable operations over :class:`~stdan.autodiff.tape.Var`.

Each op computes its forward value with :mod:`stdan.tensor` and records a
closure that maps the upstream gradient to one gradient per parent. Plain
ndarrays are accepted wherever a Var is and are treated as constants.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from .tape import Tape, Var


def _tape(*args) -> Tape:
    for a in args:
        if isinstance(a, Var):
            return a.tape
        if isinstance(a, (list, tuple)):
            for b in a:
                if isinstance(b, Var):
                    return b.tape
    raise TypeError("at least one argument must be a Var")


def _var(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        return x
    return tape.constant(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Var:
    tape = _tape(a, b)
    a, b = _var(tape, a), _var(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record_op(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Var:
    tape = _tape(a, b)
    a, b = _var(tape, a), _var(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record_op(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Var:
    if isinstance(b, (int, float)):
        return scale(a, b)
    if isinstance(a, (int, float)):
        return scale(b, a)
    tape = _tape(a, b)
    a, b = _var(tape, a), _var(tape, b)
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g * bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return tape.record_op(av * bv, (a, b), vjp, "mul")


def scale(a: Var, s: float) -> Var:
    return a.tape.record_op(a.value * s, (a,), lambda g: (g * s,), "scale")


def sum(a: Var, axis=None, keepdims=False) -> Var:
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record_op(np.asarray(a.value.sum(axis=axis, keepdims=keepdims)), (a,), vjp, "sum")


def mean(a: Var) -> Var:
    return scale(sum(a), 1.0 / a.value.size)


# ---------------------------------------------------------------- shape


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return a.tape.record_op(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Var, axes) -> Var:
    inv = np.argsort(axes)
    return a.tape.record_op(
        np.ascontiguousarray(a.value.transpose(axes)), (a,), lambda g: (g.transpose(inv),), "transpose"
    )


def getitem(a: Var, idx) -> Var:
    shape, dtype = a.shape, a.dtype

    def vjp(g):
        out = np.zeros(shape, dtype=dtype)
        out[idx] = g
        return (out,)

    return a.tape.record_op(np.array(a.value[idx]), (a,), vjp, "getitem")


def concat(xs, axis=0) -> Var:
    tape = _tape(xs)
    xs = [_var(tape, x) for x in xs]
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tape.record_op(
        np.concatenate([x.value for x in xs], axis=axis),
        tuple(xs),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
        "concat",
    )


def stack(xs, axis=0) -> Var:
    tape = _tape(xs)
    xs = [_var(tape, x) for x in xs]
    n = len(xs)
    return tape.record_op(
        np.stack([x.value for x in xs], axis=axis),
        tuple(xs),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


def roll(a: Var, shift, axis) -> Var:
    neg = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift
    return a.tape.record_op(np.roll(a.value, shift, axis), (a,), lambda g: (np.roll(g, neg, axis),), "roll")


def pad2d(a: Var, pad, mode="zero") -> Var:
    shape = a.shape
    return a.tape.record_op(
        T.pad2d(a.value, pad, mode), (a,), lambda g: (T.pad2d_backward(g, shape, pad, mode),), "pad2d"
    )


def take_along_axis(a: Var, idx: np.ndarray, axis: int) -> Var:
    """Gather with constant integer indices (the selection itself is not differentiated)."""
    shape, dtype = a.shape, a.dtype
    ax = axis % a.ndim

    def vjp(g):
        out = np.zeros(shape, dtype=dtype)
        full_idx = list(np.indices(idx.shape, sparse=True))
        full_idx[ax] = idx
        np.add.at(out, tuple(full_idx), g)
        return (out,)

    return a.tape.record_op(np.take_along_axis(a.value, idx, axis=ax), (a,), vjp, "take_along_axis")


def index_select(a: Var, idx: np.ndarray, axis: int) -> Var:
    shape, dtype = a.shape, a.dtype
    ax = axis % a.ndim

    def vjp(g):
        out = np.zeros(shape, dtype=dtype)
        moved = np.moveaxis(out, ax, 0)
        np.add.at(moved, idx.ravel(), np.moveaxis(g, ax, 0).reshape((idx.size,) + moved.shape[1:]))
        return (out,)

    return a.tape.record_op(np.take(a.value, idx, axis=ax), (a,), vjp, "index_select")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Var:
    tape = _tape(a, b)
    a, b = _var(tape, a), _var(tape, b)
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return tape.record_op(av @ bv, (a, b), vjp, "matmul")


def conv2d(x, weight, bias=None, stride=1, padding=0, pad_mode="zero") -> Var:
    tape = _tape(x, weight)
    x, weight = _var(tape, x), _var(tape, weight)
    parents = (x, weight) if bias is None else (x, weight, _var(tape, bias))
    xv, wv = x.value, weight.value
    out = T.conv2d(xv, wv, None if bias is None else parents[2].value, stride, padding, pad_mode)

    def vjp(g):
        gx, gw, gb = T.conv2d_backward(g, xv, wv, stride, padding, pad_mode, need_x=x.requires_grad)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return tape.record_op(out, parents, vjp, "conv2d")


def linear(x, weight, bias=None) -> Var:
    tape = _tape(x, weight)
    x, weight = _var(tape, x), _var(tape, weight)
    parents = (x, weight) if bias is None else (x, weight, _var(tape, bias))
    xv, wv = x.value, weight.value
    out = T.linear(xv, wv, None if bias is None else parents[2].value)

    def vjp(g):
        gx, gw, gb = T.linear_backward(g, xv, wv)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return tape.record_op(out, parents, vjp, "linear")


def layer_norm(x, gamma, beta, eps=1e-5) -> Var:
    tape = _tape(x, gamma, beta)
    x, gamma, beta = _var(tape, x), _var(tape, gamma), _var(tape, beta)
    xv, gv = x.value, gamma.value
    return tape.record_op(
        T.layer_norm(xv, gv, beta.value, eps),
        (x, gamma, beta),
        lambda g: T.layer_norm_backward(g, xv, gv, eps),
        "layer_norm",
    )


# ---------------------------------------------------------------- nonlinearities


def softmax(x: Var, axis=-1) -> Var:
    y = T.softmax(x.value, axis)
    return x.tape.record_op(y, (x,), lambda g: (T.softmax_backward(g, y, axis),), "softmax")


def leaky_relu(x: Var, slope=0.1) -> Var:
    xv = x.value
    return x.tape.record_op(
        T.leaky_relu(xv, slope), (x,), lambda g: (T.leaky_relu_backward(g, xv, slope),), "leaky_relu"
    )


def gelu(x: Var) -> Var:
    xv = x.value
    return x.tape.record_op(T.gelu(xv), (x,), lambda g: (T.gelu_backward(g, xv),), "gelu")


def sigmoid(x: Var) -> Var:
    y = T.sigmoid(x.value)
    return x.tape.record_op(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


# ---------------------------------------------------------------- sampling & layout


def bilinear_gather(x, px, py) -> Var:
    tape = _tape(x, px, py)
    x, px, py = _var(tape, x), _var(tape, px), _var(tape, py)
    xv, pxv, pyv = x.value, px.value, py.value

    def vjp(g):
        need_c = px.requires_grad or py.requires_grad
        return T.bilinear_gather_backward(g, xv, pxv, pyv, need_x=x.requires_grad, need_coords=need_c)

    return tape.record_op(T.bilinear_gather(xv, pxv, pyv), (x, px, py), vjp, "bilinear_gather")


def pixel_shuffle(x: Var, r: int) -> Var:
    return x.tape.record_op(
        T.pixel_shuffle(x.value, r), (x,), lambda g: (T.pixel_unshuffle(g, r),), "pixel_shuffle"
    )


def pixel_unshuffle(x: Var, r: int) -> Var:
    return x.tape.record_op(
        T.pixel_unshuffle(x.value, r), (x,), lambda g: (T.pixel_shuffle(g, r),), "pixel_unshuffle"
    )


# ---------------------------------------------------------------- loss


def charbonnier_loss(pred, gt, eps=1e-3) -> Var:
    """mean(sqrt((pred - gt)^2 + eps^2)), evaluated as eps + mean(d^2 / (r + eps))."""
    tape = _tape(pred, gt)
    pred, gt = _var(tape, pred), _var(tape, gt)
    if pred.shape != gt.shape:
        raise ValueError(f"charbonnier_loss shape mismatch {pred.shape} vs {gt.shape}")
    d = pred.value - gt.value
    r = np.sqrt(d * d + eps * eps)
    n = d.size
    value = np.asarray(eps + (d * d / (r + eps)).sum() / n, dtype=d.dtype)

    def vjp(g):
        gd = g * d / r / n
        return gd, -gd

    return tape.record_op(value, (pred, gt), vjp, "charbonnier_loss")

