"""Model hyper-parameters with validation and named presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from ..errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    ctx_len: int = 10
    channels: int = 1
    height: int = 28
    width: int = 28
    patch: int = 7
    layers: int = 2
    spatial_dim: int = 32
    spatial_heads: int = 2
    temporal_dim: int = 32
    temporal_heads: int = 2
    mlp_ratio: int = 4
    dropout: float = 0.0
    keep_spatial: float = 0.5
    keep_temporal: float = 0.5
    tau: float = 1.0
    n_actions: int = 4
    conv_channels: tuple = (8, 16)
    credit_bias: float = 2.0   # sigmoid(2) ~ 0.88 of tokens kept at the start of stage 2
    exempt_h: bool = False     # keep pure-state tokens out of temporal masking
    rtg_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(f"image {self.height}x{self.width} not divisible by patch {self.patch}")
        if self.spatial_dim % self.spatial_heads or self.temporal_dim % self.temporal_heads:
            raise ConfigError("embedding dims must be divisible by head counts")
        for name in ("keep_spatial", "keep_temporal"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if min(self.ctx_len, self.layers, self.n_actions, self.channels) < 1:
            raise ConfigError("ctx_len, layers, n_actions and channels must be >= 1")
        if self.spatial_dim < 4 or self.temporal_dim < 4:
            raise ConfigError("embedding dims must be >= 4 for the credit head bottleneck")
        if min(self.conv_out_hw) < 1:
            raise ConfigError("image too small for the convolutional state encoder")

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def n_tokens(self) -> int:
        return self.n_patches + 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    @property
    def conv_out_hw(self) -> tuple:
        h, w = self.height, self.width
        for _ in self.conv_channels:
            h, w = (h - 3) // 2 + 1, (w - 3) // 2 + 1
        return h, w

    @property
    def start_id(self) -> int:
        """Reserved previous-action id for the first step of an episode."""
        return self.n_actions

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


PRESETS = {
    # fits a single CPU core: 28x28 frames, 16 patches of 7 px
    "desk": ModelConfig(),
    # the full-size Atari-style setting
    "atari": ModelConfig(ctx_len=30, height=84, width=84, patch=7, layers=6, spatial_dim=192,
                         spatial_heads=8, temporal_dim=64, temporal_heads=4, dropout=0.1),
    # a few hundred parameters, for finite-difference checks
    "micro": ModelConfig(ctx_len=3, height=4, width=4, patch=2, layers=1, spatial_dim=4,
                         spatial_heads=1, temporal_dim=4, temporal_heads=1, mlp_ratio=1,
                         conv_channels=(1,), n_actions=2),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name].with_(**overrides) if overrides else PRESETS[name]
