"""Named parameter registry and its deterministic initialization recipe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INITS = ("uniform", "zeros", "ones", "fuse_identity", "fuse_average")

ModelParams = dict  # name -> ndarray, insertion-ordered


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str = "uniform"
    fan_in: int = 0

    def __post_init__(self):
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")


def conv_specs(prefix: str, c_in: int, c_out: int, k: int, init: str = "uniform") -> list[ParamSpec]:
    fan_in = c_in * k * k
    bias_init = "uniform" if init == "uniform" else "zeros"
    return [
        ParamSpec(f"{prefix}.weight", (c_out, c_in, k, k), init, fan_in),
        ParamSpec(f"{prefix}.bias", (c_out,), bias_init, fan_in),
    ]


def linear_specs(prefix: str, c_in: int, c_out: int, init: str = "uniform") -> list[ParamSpec]:
    bias_init = "uniform" if init == "uniform" else "zeros"
    return [
        ParamSpec(f"{prefix}.weight", (c_out, c_in), init, c_in),
        ParamSpec(f"{prefix}.bias", (c_out,), bias_init, c_in),
    ]


def norm_specs(prefix: str, c: int) -> list[ParamSpec]:
    return [ParamSpec(f"{prefix}.weight", (c,), "ones"), ParamSpec(f"{prefix}.bias", (c,), "zeros")]


def _fuse_weight(shape, halves, dtype):
    c_out, c_in = shape[:2]
    w = np.zeros(shape, dtype=dtype)
    half = c_in // 2
    for k, coef in enumerate(halves):
        for i in range(c_out):
            w[i, k * half + i, 0, 0] = coef
    return w


def initialize(specs: list[ParamSpec], seed: int = 0, dtype=np.float64) -> ModelParams:
    """Seeded uniform fan-in init (bound 1/sqrt(fan_in)); draws happen in spec order."""
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names: {dup}")
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    for spec in specs:
        if spec.init == "uniform":
            bound = 1.0 / np.sqrt(spec.fan_in)
            value = rng.uniform(-bound, bound, size=spec.shape)
        elif spec.init == "zeros":
            value = np.zeros(spec.shape)
        elif spec.init == "ones":
            value = np.ones(spec.shape)
        elif spec.init == "fuse_identity":
            value = _fuse_weight(spec.shape, (1.0, 0.0), np.float64)
        else:
            value = _fuse_weight(spec.shape, (0.5, 0.5), np.float64)
        params[spec.name] = value.astype(dtype)
    return params


def count_params(params: ModelParams) -> int:
    return int(sum(v.size for v in params.values()))
