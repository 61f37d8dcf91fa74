"""Model and run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

VARIANTS = ("omega1", "omega2", "omega3", "omega4", "omega5", "full")

# variant -> (long-short interpolation, aggregation window)
_ABLATIONS = {
    "omega1": (False, "none"),
    "omega2": (False, "fixed1"),
    "omega3": (False, "fixed3"),
    "omega4": (False, "deformable"),
    "omega5": (True, "deformable"),
    "full": (True, "deformable"),
}


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    channels: int = 64
    embed_channels: int = 72
    m_f: int = 2
    m_b: int = 6
    stbs_per_rstb: int = 6
    window_size: int = 4
    num_heads: int = 4
    mlp_ratio: float = 2.0
    relative_position_bias: bool = False
    kernel_size: int = 3
    top_t: int = 2
    scale: int = 4
    variant: str = "full"
    precision: str = "float64"
    seed: int = 0
    leaky_slope: float = 0.1
    pyramid_levels: int = 1
    dcn_modulation: bool = False
    scaled_scores: bool = False
    charbonnier_eps: float = 1e-3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.channels % self.num_heads:
            raise ValueError(f"channels {self.channels} not divisible by {self.num_heads} heads")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if not 1 <= self.top_t <= self.kernel_size**2:
            raise ValueError(f"top_t must lie in [1, {self.kernel_size**2}], got {self.top_t}")
        if self.scale != 4:
            raise ValueError("only x4 upsampling is supported")
        if self.pyramid_levels != 1:
            raise ValueError("only single-level deformable alignment (pyramid_levels=1) is implemented")
        for name in ("m_f", "m_b", "stbs_per_rstb", "window_size", "channels", "embed_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    @property
    def long_term(self) -> bool:
        return _ABLATIONS[self.variant][0]

    @property
    def aggregation(self) -> str:
        """One of none, fixed1, fixed3, deformable."""
        return _ABLATIONS[self.variant][1]

    @property
    def stdfa_kernel(self) -> int:
        return 1 if self.aggregation == "fixed1" else self.kernel_size

    @property
    def stdfa_top_t(self) -> int:
        return 1 if self.aggregation == "fixed1" else self.top_t

    def with_variant(self, variant: str) -> "ModelConfig":
        return replace(self, variant=variant)

    @classmethod
    def micro(cls, **overrides) -> "ModelConfig":
        """8 channels and one RSTB of one STB per stage."""
        base = dict(channels=8, embed_channels=8, m_f=1, m_b=1, stbs_per_rstb=1, num_heads=2)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class RunConfig:
    """JSON-serializable run settings: model, optimizer, data and paths."""

    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 200
    seed: int = 0
    crop_size: int = 32
    lr_max: float = 2e-4
    lr_min: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True
    data_dir: str = ""
    weights_path: str = ""
    log_path: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        if "model" in data:
            model = data["model"]
            if not isinstance(model, dict):
                raise ValueError("'model' must be an object")
            mknown = {f.name for f in fields(ModelConfig)}
            bad = sorted(set(model) - mknown)
            if bad:
                raise ValueError(f"unknown config keys: {', '.join('model.' + b for b in bad)}")
            data["model"] = ModelConfig(**model)
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())
