"""The burst super-resolution network: encoder, alignment, fusion, up-sampler."""

from __future__ import annotations

from typing import List, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InvalidInput, InvalidShape
from .align import build_align
from .config import ModelConfig
from .flow import PyramidFlow, ZeroFlow
from .fusion import RecurrentFusion
from .layers import conv3x3, residual_blocks

MIN_SIZE = 8


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.conv_first = conv3x3(cfg.in_channels, cfg.channels)
        self.blocks = residual_blocks(cfg.channels, cfg.encoder_blocks)

    def forward(self, x):
        return self.blocks(self.conv_first(x))


class Upsampler(nn.Module):
    """Residual blocks, pixel-shuffle stages with skips, 3-channel output conv."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        self.blocks = residual_blocks(c, cfg.upsampler_blocks)
        self.factors = cfg.upsample_factors
        self.stages = nn.ModuleList(conv3x3(c, c * r * r) for r in self.factors)
        self.conv_last = conv3x3(c, 3)

    def forward(self, h):
        x = self.blocks(h)
        for r, conv in zip(self.factors, self.stages):
            skip = F.interpolate(x, scale_factor=r, mode="bilinear", align_corners=False)
            x = F.leaky_relu(F.pixel_shuffle(conv(x), r), 0.1) + skip
        return self.conv_last(x)


class RBSR(nn.Module):
    """Recurrent burst super-resolution network.

    Bursts are tensors of shape (B, N, 4, h, w) holding packed RGGB frames,
    frame 0 being the base frame. Outputs are (B, 3, 2*scale*h, 2*scale*w)
    linear RGB, unclipped.

    With ``cfg.flow_source == "oracle"`` every call needs ``flows`` of shape
    (B, N-1, 2, h, w) for frames 2..N; otherwise ``flows`` may still be
    passed to bypass the estimator.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        if cfg.uses_flow and cfg.flow_source == "learned":
            self.flow_net = PyramidFlow(cfg.in_channels, cfg.flow_width, cfg.flow_levels)
        else:
            self.flow_net = ZeroFlow()
        self.aligner = build_align(cfg)
        self.fusion = RecurrentFusion(cfg)
        self.upsampler = Upsampler(cfg)

    # building blocks ------------------------------------------------------

    def encode(self, frames):
        if frames.dim() != 4 or frames.shape[1] != self.cfg.in_channels:
            raise InvalidShape(f"expected (B, {self.cfg.in_channels}, h, w) frames, got {tuple(frames.shape)}")
        if min(frames.shape[-2:]) < MIN_SIZE:
            raise InvalidShape(f"frames must be at least {MIN_SIZE}x{MIN_SIZE}, got {tuple(frames.shape[-2:])}")
        return self.encoder(frames)

    def estimate_flow(self, base, other):
        if base.shape != other.shape:
            raise InvalidShape(f"flow inputs differ in shape: {tuple(base.shape)} vs {tuple(other.shape)}")
        return self.flow_net(base, other)

    def align(self, f_base, f_i, flow=None):
        if f_base.shape != f_i.shape:
            raise InvalidShape(f"feature shapes differ: {tuple(f_base.shape)} vs {tuple(f_i.shape)}")
        if self.cfg.uses_flow:
            b, _, h, w = f_i.shape
            if flow is None or flow.shape != (b, 2, h, w):
                got = None if flow is None else tuple(flow.shape)
                raise InvalidShape(f"flow must be {(b, 2, h, w)}, got {got}")
        return self.aligner(f_base, f_i, flow)

    def upsample(self, h):
        return self.upsampler(h)

    # pipeline -------------------------------------------------------------

    @staticmethod
    def as_burst(burst):
        """Accept a (B, N, C, h, w) tensor or a list of (C, h, w) / (B, C, h, w) frames."""
        if isinstance(burst, (list, tuple)):
            if not burst:
                raise InvalidInput("empty burst")
            if len({tuple(f.shape) for f in burst}) != 1:
                raise InvalidShape(f"ragged burst: {[tuple(f.shape) for f in burst]}")
            return torch.stack([f if f.dim() == 4 else f.unsqueeze(0) for f in burst], dim=1)
        return burst

    def _check_burst(self, burst, flows):
        if burst.dim() != 5:
            raise InvalidShape(f"expected a (B, N, C, h, w) burst, got {tuple(burst.shape)}")
        if burst.shape[1] < 1:
            raise InvalidInput("empty burst")
        b, n, _, h, w = burst.shape
        if flows is not None and flows.shape != (b, n - 1, 2, h, w):
            raise InvalidShape(f"flows must be {(b, n - 1, 2, h, w)}, got {tuple(flows.shape)}")
        if self.cfg.uses_flow and self.cfg.flow_source == "oracle" and flows is None and n > 1:
            raise InvalidInput("flow_source='oracle' needs explicit flows")

    def features(self, burst, flows=None):
        """Encode every frame and align frames 2..N to the base frame.

        Returns ``(f_base, aligned)`` with ``aligned`` a list of N-1 tensors.
        The base frame is encoded on its own so its feature is computed the
        same way for every burst length.
        """
        burst = self.as_burst(burst)
        self._check_burst(burst, flows)
        b, n, c, h, w = burst.shape
        f_base = self.encode(burst[:, 0])
        if n == 1:
            return f_base, []
        others = burst[:, 1:].reshape(b * (n - 1), c, h, w)
        feats = self.encode(others)
        base_rep = f_base.unsqueeze(1).expand(b, n - 1, *f_base.shape[1:]).reshape(feats.shape)
        flow = None
        if self.cfg.uses_flow:
            if flows is not None:
                flow = flows.reshape(b * (n - 1), 2, h, w).to(feats.dtype)
            else:
                base_frames = burst[:, :1].expand(b, n - 1, c, h, w).reshape(others.shape)
                flow = self.estimate_flow(base_frames, others)
        aligned = self.align(base_rep, feats, flow).reshape(b, n - 1, *f_base.shape[1:])
        return f_base, list(aligned.unbind(1))

    def recurrent_fuse(self, f_base, aligned):
        return self.fusion(f_base, aligned)

    def forward(self, burst, flows=None):
        f_base, aligned = self.features(burst, flows)
        if not aligned:
            return self.upsample(f_base)
        return self.upsample(self.recurrent_fuse(f_base, aligned))

    def forward_intermediates(self, burst, indices: Sequence[int], flows=None) -> List[torch.Tensor]:
        """SR outputs after merging the first ``i`` frames, for each ``i``.

        Encoding, flow and alignment run once and are shared by all outputs.
        """
        burst = self.as_burst(burst)
        n = burst.shape[1]
        indices = [int(i) for i in indices]
        for i in indices:
            if not 1 <= i <= n:
                raise InvalidInput(f"frame count {i} outside [1, {n}]")
        f_base, aligned = self.features(burst, flows)
        states = self.fusion.states(f_base, aligned, indices)
        b = burst.shape[0]
        out = self.upsample(torch.cat(states, dim=0))
        return list(out.split(b, dim=0))

    def forward_intermediate(self, burst, i: int, flows=None):
        return self.forward_intermediates(burst, [i], flows)[0]

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def count_parameters(cfg: ModelConfig) -> int:
    return RBSR(cfg).count_parameters()
