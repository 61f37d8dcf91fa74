"""Synthetic sequences, bicubic degradation, PNG frame I/O and the binary weight format."""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .params import ModelParams, ParamSpec

FRAME_PATTERN = "frame_{:03d}.png"
_FRAME_RE = re.compile(r"^frame_(\d{3,})\.png$")


@dataclass
class FrameSequence:
    """Frames as (3, H, W) float arrays in [0, 1] with a 1-based time index each."""

    frames: list[np.ndarray]
    times: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.times:
            self.times = list(range(1, len(self.frames) + 1))
        if len(self.times) != len(self.frames):
            raise ValueError("one time index per frame is required")

    def __len__(self):
        return len(self.frames)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames[0].shape[1:] if self.frames else (0, 0)

    def batched(self) -> list[np.ndarray]:
        """Frames as (1, 3, H, W) arrays for the model."""
        return [f[None] for f in self.frames]


# ---------------------------------------------------------------- synthetic scenes


@dataclass
class _Shape:
    kind: str  # circle | box
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float
    color: np.ndarray


@dataclass
class SyntheticScene:
    """A gradient background with 2-4 anti-aliased shapes moving by ``motion`` per frame."""

    size: int
    motion: tuple[float, float, float]
    background: tuple[np.ndarray, np.ndarray, float]
    shapes: list[_Shape]

    @classmethod
    def from_seed(cls, seed: int, size: int = 64, motion=(2.0, 1.0, 0.0), frames: int = 7) -> "SyntheticScene":
        rng = np.random.default_rng(seed)
        dx, dy, rot = (tuple(motion) + (0.0,))[:3]
        c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
        direction = rng.uniform(0, 2 * np.pi)
        shapes = []
        travel_x, travel_y = dx * (frames - 1), dy * (frames - 1)
        for _ in range(rng.integers(2, 5)):
            kind = "circle" if rng.random() < 0.5 else "box"
            rx = rng.uniform(0.08, 0.18) * size
            ry = rx if kind == "circle" else rng.uniform(0.08, 0.18) * size
            reach = np.hypot(rx, ry) + 1.0
            cx = _place(rng, size, reach, travel_x)
            cy = _place(rng, size, reach, travel_y)
            shapes.append(_Shape(kind, cx, cy, rx, ry, rng.uniform(0, np.pi), rng.uniform(0.0, 1.0, 3)))
        return cls(size, (float(dx), float(dy), float(rot)), (c0, c1, direction), shapes)

    def _background(self) -> np.ndarray:
        c0, c1, direction = self.background
        ys, xs = np.mgrid[0 : self.size, 0 : self.size] / max(self.size - 1, 1)
        t = (np.cos(direction) * xs + np.sin(direction) * ys + 1.5) / 3.0
        return c0[:, None, None] * (1 - t) + c1[:, None, None] * t

    def coverage(self, t: int, shape_index: int) -> np.ndarray:
        """Anti-aliased coverage in [0, 1] of one shape at 0-based frame ``t``."""
        s = self.shapes[shape_index]
        dx, dy, rot = self.motion
        ys, xs = np.mgrid[0 : self.size, 0 : self.size].astype(np.float64)
        ang = s.angle + np.deg2rad(rot) * t
        u = xs - (s.cx + dx * t)
        v = ys - (s.cy + dy * t)
        lu = np.cos(ang) * u + np.sin(ang) * v
        lv = -np.sin(ang) * u + np.cos(ang) * v
        if s.kind == "circle":
            sdf = np.hypot(lu, lv) - s.rx
        else:
            qx, qy = np.abs(lu) - s.rx, np.abs(lv) - s.ry
            outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
            sdf = outside + np.minimum(np.maximum(qx, qy), 0)
        return np.clip(0.5 - sdf, 0.0, 1.0)

    def render(self, t: int) -> np.ndarray:
        img = self._background()
        for i, s in enumerate(self.shapes):
            cov = self.coverage(t, i)
            img = img * (1 - cov) + s.color[:, None, None] * cov
        return np.clip(img, 0.0, 1.0)


def _place(rng, size, reach, travel):
    lo = reach - min(travel, 0.0)
    hi = size - reach - max(travel, 0.0)
    if hi <= lo:
        return rng.uniform(reach, max(size - reach, reach + 1e-9))
    return rng.uniform(lo, hi)


def parse_motion(spec: str) -> tuple[float, float, float]:
    """'dx,dy' or 'dx,dy,degrees_per_frame'."""
    parts = [float(p) for p in spec.split(",") if p.strip()]
    if len(parts) not in (2, 3):
        raise ValueError(f"motion must be 'dx,dy[,rot]', got {spec!r}")
    return (parts[0], parts[1], parts[2] if len(parts) == 3 else 0.0)


def synth_sequence(seed: int, frames: int = 7, size: int = 64, motion=(2.0, 1.0, 0.0)) -> FrameSequence:
    if frames < 1 or frames % 2 == 0:
        raise ValueError(f"frame count must be odd so decimation keeps both ends, got {frames}")
    if size < 4:
        raise ValueError("size must be at least 4")
    scene = SyntheticScene.from_seed(seed, size, motion, frames)
    return FrameSequence([scene.render(t) for t in range(frames)])


# ---------------------------------------------------------------- bicubic degradation


def cubic_kernel(x, a: float = -0.5):
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """(out_len, in_len) bicubic interpolation matrix with symmetric border handling."""
    scale = out_len / in_len
    width = 4.0 / scale if (scale < 1 and antialias) else 4.0
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    ind = left[:, None] + np.arange(taps)[None, :]
    if scale < 1 and antialias:
        w = scale * cubic_kernel(scale * (u[:, None] - ind), a)
    else:
        w = cubic_kernel(u[:, None] - ind, a)
    w = w / w.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len - 1, -1, -1)])
    src = mirror[np.mod(ind.astype(np.int64) - 1, 2 * in_len)]
    m = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(m, (rows, src.ravel()), w.ravel())
    return m


def bicubic_downscale(frame: np.ndarray, scale: int = 4) -> np.ndarray:
    c, h, w = frame.shape
    if h % scale or w % scale:
        raise ValueError(f"resolution {h}x{w} is not divisible by {scale}")
    mh = resize_matrix(h, h // scale)
    mw = resize_matrix(w, w // scale)
    return np.einsum("ph,chw,qw->cpq", mh, frame, mw)


def degrade(gt: FrameSequence, scale: int = 4) -> FrameSequence:
    """Keep the frames at odd 1-based times and bicubic-downscale each by ``scale``."""
    if len(gt) % 2 == 0:
        raise ValueError(f"ground truth needs an odd frame count, got {len(gt)}")
    keep = [i for i, t in enumerate(gt.times) if t % 2 == 1]
    return FrameSequence([bicubic_downscale(gt.frames[i], scale) for i in keep], [gt.times[i] for i in keep])


# ---------------------------------------------------------------- PNG frames


def quantize(frame: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 with clipping and round-half-up."""
    return np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(path, frame: np.ndarray) -> None:
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) frame, got {frame.shape}")
    Image.fromarray(quantize(frame).transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise ValueError(f"{path}: expected an 8-bit RGB PNG, got mode {img.mode}")
        arr = np.asarray(img, dtype=np.float64)
    return arr.transpose(2, 0, 1) / 255.0


@dataclass
class SequenceManifest:
    directory: Path
    frame_count: int
    resolution: tuple[int, int]
    role: str = "gt"

    def paths(self) -> list[Path]:
        return [self.directory / FRAME_PATTERN.format(i) for i in range(1, self.frame_count + 1)]


def scan_manifest(directory, role: str = "gt") -> SequenceManifest:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory not found: {directory}")
    indices = sorted(int(m.group(1)) for p in directory.iterdir() if (m := _FRAME_RE.match(p.name)))
    if not indices:
        raise FileNotFoundError(f"no frame_###.png files in {directory}")
    if indices != list(range(1, len(indices) + 1)):
        raise ValueError(f"{directory}: frame indices must be contiguous from 1, got {indices}")
    with Image.open(directory / FRAME_PATTERN.format(1)) as img:
        w, h = img.size
    return SequenceManifest(directory, len(indices), (h, w), role)


def read_sequence(directory, role: str = "gt") -> FrameSequence:
    manifest = scan_manifest(directory, role)
    frames = [read_png(p) for p in manifest.paths()]
    if any(f.shape[1:] != manifest.resolution for f in frames):
        raise ValueError(f"{directory}: frames differ in resolution")
    return FrameSequence(frames)


def write_sequence(directory, seq: FrameSequence) -> SequenceManifest:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        write_png(directory / FRAME_PATTERN.format(i), frame)
    return SequenceManifest(directory, len(seq), tuple(seq.resolution))


# ---------------------------------------------------------------- weight files

MAGIC = b"STDW"
VERSION = 1


class WeightFileError(ValueError):
    pass


def save_weights(path, params: ModelParams) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_weight_file(path) -> dict[str, np.ndarray]:
    """Raw tensors from a weight file, in file order, as float32."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise WeightFileError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    try:
        version, count = struct.unpack_from("<HI", data, 4)
        if version != VERSION:
            raise WeightFileError(f"{path}: unsupported version {version}")
        pos = 10
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise WeightFileError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
            pos += 4 * size
    except struct.error as exc:
        raise WeightFileError(f"{path}: truncated weight file") from exc
    if pos != len(data):
        raise WeightFileError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def load_weights(path, specs: list[ParamSpec], dtype=np.float64, allow_extra: bool = False) -> ModelParams:
    """Load and validate against the parameter specs of the current configuration.

    ``allow_extra`` ignores stored tensors the configuration does not use, so an
    ablation variant can run from full-model weights.
    """
    raw = read_weight_file(path)
    expected = {s.name: s for s in specs}
    missing = [n for n in expected if n not in raw]
    extra = [n for n in raw if n not in expected]
    if missing:
        raise WeightFileError(f"{path}: missing tensor(s): {', '.join(missing)}")
    if extra and not allow_extra:
        raise WeightFileError(f"{path}: unknown tensor(s): {', '.join(extra)}")
    for name, spec in expected.items():
        if raw[name].shape != tuple(spec.shape):
            raise WeightFileError(
                f"{path}: tensor {name!r} has shape {raw[name].shape}, config expects {tuple(spec.shape)}"
            )
    return {name: raw[name].astype(dtype) for name in expected}
