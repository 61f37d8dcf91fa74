from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PASS_THRESHOLD = 1e-4


def relative_error(a, f) -> np.ndarray:
    a, f = np.asarray(a, dtype=np.float64), np.asarray(f, dtype=np.float64)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences (f(x + h e) - f(x - h e)) / 2h for every element of ``x``.

    ``indices`` restricts the work to a subset of flat positions; the other
    entries of the result are left at zero.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x))
        flat[i] = orig - step
        lo = float(f(x))
        flat[i] = orig
        out[i] = (hi - lo) / (2 * step)
    return out.reshape(x.shape)


@dataclass
class GradReport:
    """Max relative error between analytic and finite-difference gradients, per tensor."""

    op: str
    seed: int
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    zero_entries: dict[str, int] = field(default_factory=dict)
    threshold: float = PASS_THRESHOLD

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold

    def lines(self) -> list[str]:
        status = "PASS" if self.passed else "FAIL"
        out = [f"{self.op:<18} seed={self.seed:<3} max_rel_err={self.max_error:.3e}  {status}"]
        for name, err in self.errors.items():
            zeros = self.zero_entries.get(name, 0)
            note = f", {zeros} exact zeros" if zeros else ""
            out.append(f"    {name:<40} {err:.3e}  ({self.checked[name]} entries{note})")
        return out
