"""A flat reverse-mode tape for the fixed STDAN pipeline."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..tensor import ensure_finite


class TapeError(RuntimeError):
    pass


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("value", "tape", "index", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, requires_grad: bool, name=None):
        self.value = value
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, grad={self.requires_grad})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __getitem__(self, idx):
        from . import ops

        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out: int, parents: tuple[Var, ...], vjp: Callable):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Scope:
    """Prefix view of a tape's named parameters: ``scope["weight"]``, ``scope.sub("conv")``."""

    def __init__(self, tape: "Tape", prefix: str = ""):
        self.tape = tape
        self.prefix = prefix

    def _full(self, name):
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Var:
        return self.tape.param(self._full(name))

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self.tape.params

    def sub(self, name: str) -> "Scope":
        return Scope(self.tape, self._full(name))


class Tape:
    """Records differentiable operations and replays their adjoints in reverse.

    With ``record=False`` operations still produce :class:`Var` results but no
    backward information is kept (inference mode).
    """

    def __init__(self, params: dict[str, np.ndarray] | None = None, record: bool = True, check_finite: bool = True):
        self.params = params if params is not None else {}
        self.record = record
        self.check_finite = check_finite
        self.reset()

    def reset(self):
        self._nodes: list[_Node] = []
        self._count = 0
        self._param_vars: dict[str, Var] = {}
        self._grads: list | None = None

    def _new(self, value, requires_grad, name=None) -> Var:
        var = Var(value, self, self._count, requires_grad and self.record, name)
        self._count += 1
        return var

    def scope(self, prefix: str = "") -> Scope:
        return Scope(self, prefix)

    def param(self, name: str) -> Var:
        var = self._param_vars.get(name)
        if var is None:
            if name not in self.params:
                raise KeyError(f"missing parameter {name!r}")
            var = self._new(self.params[name], True, name)
            self._param_vars[name] = var
        return var

    def input(self, value, name=None) -> Var:
        """A leaf that receives a gradient."""
        return self._new(np.asarray(value), True, name)

    def constant(self, value) -> Var:
        return self._new(np.asarray(value), False)

    def record_op(self, value: np.ndarray, parents: Sequence[Var], vjp: Callable, where: str) -> Var:
        """Register ``value`` computed from ``parents``; ``vjp(g)`` returns one gradient per parent."""
        if self.check_finite:
            ensure_finite(value, where)
        needs = any(p.requires_grad for p in parents)
        out = self._new(value, needs)
        if needs:
            self._nodes.append(_Node(out.index, tuple(parents), vjp))
        return out

    @property
    def num_nodes(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Var, loss_grad: float = 1.0) -> None:
        if not self.record:
            raise TapeError("this tape was created with record=False")
        if self._grads is not None:
            raise TapeError("backward already replayed on this tape; call reset() and run forward again")
        if loss.tape is not self or not self._nodes:
            raise TapeError("backward called before a forward pass was recorded")
        if loss.value.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        if self._nodes[-1].out != loss.index:
            raise TapeError("the loss must be the last recorded operation")
        grads: list = [None] * self._count
        grads[loss.index] = np.full(loss.shape, loss_grad, dtype=loss.dtype)
        for node in reversed(self._nodes):
            g = grads[node.out]
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
            grads[node.out] = None
        self._grads = grads

    def grad(self, var: Var) -> np.ndarray:
        if self._grads is None:
            raise TapeError("no gradients: run backward() first")
        g = self._grads[var.index]
        return np.zeros_like(var.value) if g is None else g

    def param_grads(self) -> dict[str, np.ndarray]:
        """Gradient for every parameter; parameters never read get zeros."""
        if self._grads is None:
            raise TapeError("no gradients: run backward() first")
        out = {}
        for name, value in self.params.items():
            var = self._param_vars.get(name)
            out[name] = np.zeros_like(value) if var is None else self.grad(var)
        return out
