"""Feature alignment of non-base frames onto the base frame."""

from __future__ import annotations


import torch
import torch.nn as nn

from .layers import conv3x3, flow_warp, modulated_deform_conv, zero_


class DeformableAlign(nn.Module):
    """Flow-guided (or plain) modulated deformable alignment.

    The non-base feature is first warped by the flow. Offset residuals and
    modulation masks are predicted from the base feature, the warped feature
    and the flow; the deformable convolution then samples the *unwarped*
    feature at ``grid + flow + offset`` and its result is added to the warped
    feature. Offset/mask heads and the deformable kernel start at zero, so an
    untrained module reduces to ``flow_warp``.
    """

    def __init__(self, channels: int, groups: int, max_residue: float = 10.0, use_flow: bool = True):
        super().__init__()
        self.groups = groups
        self.max_residue = max_residue
        self.use_flow = use_flow
        in_ch = 2 * channels + 2 if use_flow else 2 * channels
        self.conv_offset = nn.Sequential(
            conv3x3(in_ch, channels), nn.LeakyReLU(0.1),
            conv3x3(channels, channels), nn.LeakyReLU(0.1),
            conv3x3(channels, channels), nn.LeakyReLU(0.1),
            zero_(conv3x3(channels, 27 * groups)),
        )
        self.weight = nn.Parameter(torch.zeros(channels, channels, 3, 3))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, base, feat, flow=None):
        if self.use_flow:
            warped = flow_warp(feat, flow)
            cond = torch.cat([base, warped, flow], dim=1)
        else:
            warped = feat
            cond = torch.cat([base, feat], dim=1)
        o1, o2, mask = torch.chunk(self.conv_offset(cond), 3, dim=1)
        offset = self.max_residue * torch.tanh(torch.cat([o1, o2], dim=1))
        if self.use_flow:
            offset = offset + flow.flip(1).repeat(1, offset.size(1) // 2, 1, 1)
        mask = torch.sigmoid(mask)
        return warped + modulated_deform_conv(feat, offset, mask, self.weight, self.bias)

    def reset_random(self, std: float = 0.1, generator=None):
        """Randomize every parameter (used by gradient checks)."""
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * std)


class FlowOnlyAlign(nn.Module):
    def forward(self, base, feat, flow=None):
        return flow_warp(feat, flow)


class IdentityAlign(nn.Module):
    def forward(self, base, feat, flow=None):
        return feat


def build_align(cfg) -> nn.Module:
    if cfg.align_variant == "flow_guided_deformable":
        return DeformableAlign(cfg.channels, cfg.deform_groups, cfg.max_residue, use_flow=True)
    if cfg.align_variant == "deformable_only":
        return DeformableAlign(cfg.channels, cfg.deform_groups, cfg.max_residue, use_flow=False)
    if cfg.align_variant == "flow_only":
        return FlowOnlyAlign()
    return IdentityAlign()
