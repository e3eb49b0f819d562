from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Optional

from ..errors import ConfigError

FUSION_VARIANTS = ("kfgr", "baseline", "bidirectional", "reversed", "sum", "concat")
ALIGN_VARIANTS = ("flow_guided_deformable", "flow_only", "deformable_only", "identity")
FLOW_SOURCES = ("learned", "zero", "oracle")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.

    ``flow_source`` selects the optical-flow provider: a pyramid estimator
    trained end to end (``learned``), an all-zero stub (``zero``) or flows
    supplied by the caller, e.g. from known synthesis transforms (``oracle``).
    ``fixed_frames`` is the burst length the ``concat`` variant is built for.
    """

    channels: int = 64
    encoder_blocks: int = 5
    fusion_blocks: int = 40
    upsampler_blocks: int = 5
    scale: int = 4
    deform_groups: int = 8
    fusion_variant: str = "kfgr"
    align_variant: str = "flow_guided_deformable"
    flow_source: str = "learned"
    flow_width: int = 32
    flow_levels: int = 3
    max_residue: float = 10.0
    fixed_frames: Optional[int] = None
    in_channels: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("channels", "encoder_blocks", "fusion_blocks", "upsampler_blocks",
                     "deform_groups", "flow_width", "flow_levels", "in_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.fusion_variant not in FUSION_VARIANTS:
            raise ConfigError(f"unknown fusion_variant {self.fusion_variant!r}; choose from {FUSION_VARIANTS}")
        if self.align_variant not in ALIGN_VARIANTS:
            raise ConfigError(f"unknown align_variant {self.align_variant!r}; choose from {ALIGN_VARIANTS}")
        if self.flow_source not in FLOW_SOURCES:
            raise ConfigError(f"unknown flow_source {self.flow_source!r}; choose from {FLOW_SOURCES}")
        if self.uses_deformable and self.channels % self.deform_groups:
            raise ConfigError(f"channels ({self.channels}) must be divisible by deform_groups ({self.deform_groups})")
        if self.fusion_variant == "concat":
            if self.fixed_frames is None or self.fixed_frames < 1:
                raise ConfigError("fusion_variant='concat' needs fixed_frames >= 1")
        _ = self.upsample_factors  # raises on unsupported scales

    @property
    def uses_flow(self) -> bool:
        return self.align_variant in ("flow_guided_deformable", "flow_only")

    @property
    def uses_deformable(self) -> bool:
        return self.align_variant in ("flow_guided_deformable", "deformable_only")

    @property
    def upsample_factors(self):
        """Pixel-shuffle stage factors whose product is ``2 * scale``."""
        rest, out = 2 * self.scale, []
        for p in (2, 3):
            while rest % p == 0:
                out.append(p)
                rest //= p
        if rest != 1:
            raise ConfigError(f"2*scale = {2 * self.scale} must factor into 2s and 3s")
        return out

    def replace(self, **changes) -> "ModelConfig":
        data = asdict(self)
        unknown = set(changes) - set(data)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        data.update(changes)
        return ModelConfig(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))
