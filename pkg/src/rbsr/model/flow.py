"""Optical flow between the base frame and the other burst frames."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import flow_warp, zero_


class ZeroFlow(nn.Module):
    def forward(self, base, other):
        b, _, h, w = base.shape
        return base.new_zeros(b, 2, h, w)


class PyramidFlow(nn.Module):
    """Coarse-to-fine residual flow estimator trained from scratch.

    Each level sees (base, other warped by the current flow, current flow)
    and predicts a flow increment with 7x7 convolutions. The last conv of every
    level starts at zero, so an untrained estimator returns zero flow.
    """

    def __init__(self, in_channels: int = 4, width: int = 32, levels: int = 3):
        super().__init__()
        self.levels = levels
        widths = (width, 2 * width, width, max(width // 2, 1))
        self.basic = nn.ModuleList()
        for _ in range(levels):
            layers, c = [], 2 * in_channels + 2
            for wdt in widths:
                layers += [nn.Conv2d(c, wdt, 7, 1, 3), nn.ReLU()]
                c = wdt
            layers.append(zero_(nn.Conv2d(c, 2, 7, 1, 3)))
            self.basic.append(nn.Sequential(*layers))

    def forward(self, base, other):
        pyr = [(base, other)]
        for _ in range(self.levels - 1):
            b, o = pyr[-1]
            size = ((b.shape[-2] + 1) // 2, (b.shape[-1] + 1) // 2)
            pyr.append((F.adaptive_avg_pool2d(b, size), F.adaptive_avg_pool2d(o, size)))
        flow = None
        for level in range(self.levels - 1, -1, -1):
            b, o = pyr[level]
            h, w = b.shape[-2:]
            if flow is None:
                flow = b.new_zeros(b.shape[0], 2, h, w)
            else:
                ph, pw = flow.shape[-2:]
                flow = F.interpolate(flow, size=(h, w), mode="bilinear", align_corners=False)
                flow = flow * flow.new_tensor([w / pw, h / ph]).view(1, 2, 1, 1)
            warped = flow_warp(o, flow)
            flow = flow + self.basic[level](torch.cat([b, warped, flow], dim=1))
        return flow
