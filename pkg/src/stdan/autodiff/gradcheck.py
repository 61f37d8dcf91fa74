"""Registered finite-difference checks for every differentiable building block.

Each check draws random inputs from a seed, projects the op's output onto a
fixed random tensor R to get a scalar ``sum(R * op(...))``, and compares the
tape's gradient with central differences on a random subset of entries of
every input and parameter. Inputs are redrawn until they sit away from the
non-differentiable points (bilinear kinks at integer coordinates, leaky-ReLU
at zero, top-T rank changes).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..config import ModelConfig
from . import ops
from .fd import PASS_THRESHOLD, GradReport, fd_gradient, relative_error
from .tape import Scope, Tape, Var

COORD_MARGIN = 1e-4
SCORE_GAP = 1e-2
ACTIVATION_MARGIN = 1e-4
MAX_DRAWS = 200
# analytic entries at or below ZERO_GRAD are exact zeros (e.g. the key bias
# inside a softmax); their differences are pure rounding noise and are
# checked against FD_NOISE in absolute terms instead of relatively
ZERO_GRAD = 1e-12
FD_NOISE = 1e-7


@dataclass
class Problem:
    inputs: dict[str, np.ndarray]
    build: Callable[[Scope], Var]


Maker = Callable[[np.random.Generator], Problem]
Guard = Callable[[Problem], bool]


def _frac_ok(coords: np.ndarray) -> bool:
    c = np.asarray(coords)
    return bool(np.all(np.abs(c - np.round(c)) >= COORD_MARGIN))


def _away_from_zero(x: np.ndarray) -> bool:
    return bool(np.all(np.abs(x) >= ACTIVATION_MARGIN))


# ---------------------------------------------------------------- problems


def _conv2d(rng):
    inputs = {
        "x": rng.standard_normal((2, 3, 6, 5)),
        "weight": rng.standard_normal((4, 3, 3, 3)),
        "bias": rng.standard_normal(4),
    }
    return Problem(inputs, lambda p: ops.conv2d(p["x"], p["weight"], p["bias"], stride=1, padding=1))


def _linear(rng):
    inputs = {"x": rng.standard_normal((2, 5, 3, 4)), "weight": rng.standard_normal((6, 5)), "bias": rng.standard_normal(6)}
    return Problem(inputs, lambda p: ops.linear(p["x"], p["weight"], p["bias"]))


def _layer_norm(rng):
    inputs = {
        "x": rng.standard_normal((2, 6, 3, 3)),
        "gamma": 1.0 + 0.3 * rng.standard_normal(6),
        "beta": rng.standard_normal(6),
    }
    return Problem(inputs, lambda p: ops.layer_norm(p["x"], p["gamma"], p["beta"]))


def _softmax(rng):
    return Problem({"x": 2.0 * rng.standard_normal((3, 7))}, lambda p: ops.softmax(p["x"], axis=-1))


def _bilinear_sample(rng):
    h, w = 5, 6
    inputs = {
        "x": rng.standard_normal((1, 2, h, w)),
        "px": rng.uniform(0.0, w - 1.0, (1, 9)),
        "py": rng.uniform(0.0, h - 1.0, (1, 9)),
    }
    return Problem(inputs, lambda p: ops.bilinear_gather(p["x"], p["px"], p["py"]))


def _bilinear_guard(prob):
    return _frac_ok(prob.inputs["px"]) and _frac_ok(prob.inputs["py"])


def _leaky_relu(rng):
    return Problem({"x": rng.standard_normal((2, 3, 4, 4))}, lambda p: ops.leaky_relu(p["x"], 0.1))


def _pixel_shuffle(rng):
    return Problem({"x": rng.standard_normal((1, 8, 3, 2))}, lambda p: ops.pixel_shuffle(p["x"], 2))


def _charbonnier(rng):
    inputs = {"pred": rng.uniform(0, 1, (2, 3, 4, 4)), "gt": rng.uniform(0, 1, (2, 3, 4, 4))}
    # loss is already scalar; the R projection multiplies by one number
    return Problem(inputs, lambda p: ops.charbonnier_loss(p["pred"], p["gt"], 1e-3))


def _module_params(specs, rng, scale=0.3) -> dict[str, np.ndarray]:
    """Random non-zero values for every parameter, including zero-initialised heads."""
    out = {}
    for s in specs:
        if s.name.endswith(("norm1.weight", "norm2.weight")):
            out[s.name] = 1.0 + 0.2 * rng.standard_normal(s.shape)
        else:
            out[s.name] = scale * rng.standard_normal(s.shape)
    return out


_DFI_CFG = ModelConfig.micro(channels=4, embed_channels=4, num_heads=2)


def _dfi_block(rng):
    from ..lstfi import dfi_block, dfi_specs

    cfg = _DFI_CFG
    inputs = _module_params(dfi_specs("dfi", cfg), rng)
    inputs["src"] = rng.standard_normal((1, cfg.channels, 5, 5))
    inputs["ref"] = rng.standard_normal((1, cfg.channels, 5, 5))
    return Problem(inputs, lambda p: dfi_block(p["src"], p["ref"], p.sub("dfi"), cfg))


def _dfi_guard(prob):
    from ..lstfi import dfi_offsets
    from ..sampling import sample_coords

    tape = Tape(prob.inputs, record=False)
    p = tape.scope()
    src, ref = p["src"], p["ref"]
    pre = ops.conv2d(ops.concat([src, ref], axis=1), p["dfi.og1.weight"], p["dfi.og1.bias"], padding=1)
    offsets, _ = dfi_offsets(src, ref, p.sub("dfi"), _DFI_CFG)
    px, py = sample_coords(offsets, 3, src.shape)
    return _away_from_zero(pre.value) and _frac_ok(px.value) and _frac_ok(py.value)


_STDFA_CFG = ModelConfig.micro(channels=4, embed_channels=4, num_heads=2)


def _stdfa(rng):
    from ..stdfa import stdfa_forward, stdfa_specs

    cfg = _STDFA_CFG
    inputs = _module_params(stdfa_specs(cfg), rng)
    for i in range(3):
        inputs[f"f{i}"] = 2.0 * rng.standard_normal((1, cfg.channels, 3, 3))
    return Problem(inputs, lambda p: ops.stack(stdfa_forward([p[f"f{i}"] for i in range(3)], p, cfg), axis=0))


def _rank_gap_ok(scores: np.ndarray, cx: np.ndarray, cy: np.ndarray, t: int) -> bool:
    """Scores at rank t and t+1 differ by SCORE_GAP, unless both candidates read the same clamped point.

    Candidates clamped onto one border pixel carry identical scores and values,
    so swapping them cannot change the output.
    """
    if scores.shape[1] <= t:
        return True
    order = np.argsort(-scores, axis=1, kind="stable")
    a, b = order[:, t - 1 : t], order[:, t : t + 1]
    pick = lambda arr, i: np.take_along_axis(arr, i, axis=1)
    gap = pick(scores, a) - pick(scores, b)
    same = (pick(cx, a) == pick(cx, b)) & (pick(cy, a) == pick(cy, b))
    return bool(np.all((gap >= SCORE_GAP) | same))


def _stdfa_guard(prob):
    from ..sampling import sample_coords
    from ..stdfa import predict_offsets, stdfa_forward

    cfg = _STDFA_CFG
    tape = Tape(prob.inputs, record=False)
    p = tape.scope()
    feats = [p[f"f{i}"] for i in range(3)]
    scores = {}
    stdfa_forward(feats, p, cfg, lambda i, j, sel, s: scores.__setitem__((i, j), s))
    sp = p.sub("stdfa")
    h, w = feats[0].shape[2:]
    for (i, j), s in scores.items():
        q = ops.linear(feats[i], sp["q.weight"], sp["q.bias"])
        k = ops.linear(feats[j], sp["k.weight"], sp["k.bias"])
        pre = ops.conv2d(ops.concat([q, k], axis=1), sp["og1.weight"], sp["og1.bias"], padding=1)
        px, py = sample_coords(predict_offsets(q, k, sp, cfg), cfg.stdfa_kernel, q.shape)
        px, py = px.value, py.value
        if not (_away_from_zero(pre.value) and _frac_ok(px) and _frac_ok(py)):
            return False
        if not _rank_gap_ok(s, np.clip(px, 0, w - 1), np.clip(py, 0, h - 1), cfg.stdfa_top_t):
            return False
    return True


_STB_CFG = ModelConfig.micro(channels=4, embed_channels=4, num_heads=2, relative_position_bias=True)


def _stb(rng):
    from ..feat_extract import stb_forward, stb_specs

    cfg = _STB_CFG
    inputs = _module_params(stb_specs("stb", cfg), rng)
    inputs["x"] = rng.standard_normal((1, cfg.channels, 8, 8))
    return Problem(inputs, lambda p: stb_forward(p["x"], p.sub("stb"), cfg, shifted=True))


_UP_CFG = ModelConfig.micro(channels=4, embed_channels=4, num_heads=2)


def _upsample(rng):
    from ..reconstruct import upsample_specs, upsample_x4

    cfg = _UP_CFG
    inputs = _module_params(upsample_specs(cfg), rng)
    inputs["f"] = rng.standard_normal((1, cfg.channels, 2, 3))
    return Problem(inputs, lambda p: upsample_x4(p["f"], p, cfg))


_E2E_CFG = ModelConfig.micro(channels=4, embed_channels=4, num_heads=2)


def _stdan(rng):
    from ..reconstruct import model_specs, stdan_graph

    cfg = _E2E_CFG
    inputs = _module_params(model_specs(cfg), rng, scale=0.2)
    for t in range(2):
        inputs[f"lr{t}"] = rng.uniform(0, 1, (1, 3, 4, 4))
    return Problem(inputs, lambda p: ops.stack(stdan_graph([p["lr0"], p["lr1"]], p, cfg), axis=0))


REGISTRY: dict[str, tuple[Maker, Guard | None]] = {
    "conv2d": (_conv2d, None),
    "linear": (_linear, None),
    "layer_norm": (_layer_norm, None),
    "softmax": (_softmax, None),
    "bilinear_sample": (_bilinear_sample, _bilinear_guard),
    "leaky_relu": (_leaky_relu, lambda prob: _away_from_zero(prob.inputs["x"])),
    "pixel_shuffle": (_pixel_shuffle, None),
    "dfi_block": (_dfi_block, _dfi_guard),
    "stdfa_forward": (_stdfa, _stdfa_guard),
    "stb_forward": (_stb, None),
    "upsample_x4": (_upsample, None),
    "charbonnier_loss": (_charbonnier, None),
    # whole micro network; not kink-guarded, so it is an end-to-end smoke check
    "stdan": (_stdan, None),
}

OP_NAMES = tuple(REGISTRY)


# ---------------------------------------------------------------- driver


def draw_problem(op_name: str, seed: int) -> Problem:
    if op_name not in REGISTRY:
        raise KeyError(f"unknown op {op_name!r}; registered: {', '.join(OP_NAMES)}")
    make, guard = REGISTRY[op_name]
    rng = np.random.default_rng(seed)
    for _ in range(MAX_DRAWS):
        prob = make(rng)
        if guard is None or guard(prob):
            return prob
    raise RuntimeError(f"could not draw kink-free inputs for {op_name} (seed {seed})")


def _projected(prob: Problem, values: dict[str, np.ndarray], proj: np.ndarray | None, record: bool):
    tape = Tape(values, record=record)
    out = prob.build(tape.scope())
    if proj is None:
        return tape, out
    return tape, ops.sum(out * proj)


def gradcheck(op_name: str, seed: int = 0, max_entries: int = 12, step: float = 1e-5) -> GradReport:
    """Compare analytic and central-difference gradients of one registered op.

    At most ``max_entries`` randomly chosen entries per tensor are differenced.
    """
    prob = draw_problem(op_name, seed)
    rng = np.random.default_rng([seed, 7])
    _, out = _projected(prob, prob.inputs, None, record=False)
    proj = rng.standard_normal(out.shape)

    tape, loss = _projected(prob, prob.inputs, proj, record=True)
    tape.backward(loss)
    analytic = tape.param_grads()

    report = GradReport(op_name, seed, threshold=PASS_THRESHOLD)
    for name, value in prob.inputs.items():
        size = value.size
        idx = np.arange(size) if size <= max_entries else np.sort(rng.choice(size, max_entries, replace=False))

        def f(x, name=name):
            values = dict(prob.inputs)
            values[name] = x
            return float(_projected(prob, values, proj, record=False)[1].value)

        numeric = fd_gradient(f, value, step=step, indices=idx).reshape(-1)[idx]
        exact = analytic[name].reshape(-1)[idx]
        zero = np.abs(exact) <= ZERO_GRAD
        err = relative_error(exact, numeric)
        err[zero] = np.where(np.abs(numeric[zero]) <= FD_NOISE, 0.0, np.inf)
        report.errors[name] = float(err.max())
        report.checked[name] = int(idx.size)
        if zero.any():
            report.zero_entries[name] = int(zero.sum())
    return report
