from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def conv3x3(in_ch: int, out_ch: int) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, 3, 1, 1)


def zero_(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class ResidualBlock(nn.Module):
    """conv-ReLU-conv with identity skip; the second conv starts at zero."""

    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = conv3x3(ch, ch)
        self.conv2 = zero_(conv3x3(ch, ch))

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


def residual_blocks(ch: int, n: int) -> nn.Sequential:
    return nn.Sequential(*[ResidualBlock(ch) for _ in range(n)])


def flow_warp(x: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Sample ``x`` at ``grid + flow`` with bilinear weights and edge replication.

    Args:
        x: (B, C, H, W).
        flow: (B, 2, H, W), channel 0 is dx, channel 1 is dy, in pixels.

    Coordinates are split into an integer part and a fractional weight
    directly, so integer displacements (and zero flow in particular)
    reproduce the input values exactly.
    """
    b, c, h, w = x.shape
    if flow.shape != (b, 2, h, w):
        raise ValueError(f"flow shape {tuple(flow.shape)} does not match features {tuple(x.shape)}")
    gy, gx = torch.meshgrid(torch.arange(h, dtype=x.dtype, device=x.device),
                            torch.arange(w, dtype=x.dtype, device=x.device), indexing="ij")
    sx = (gx + flow[:, 0]).clamp(0, w - 1)
    sy = (gy + flow[:, 1]).clamp(0, h - 1)
    # NaN coordinates (a diverged model) keep valid indices but poison the weights
    x0 = torch.nan_to_num(sx.detach(), nan=0.0).floor()
    y0 = torch.nan_to_num(sy.detach(), nan=0.0).floor()
    fx = (sx - x0).unsqueeze(1)
    fy = (sy - y0).unsqueeze(1)
    x0i = x0.long()
    y0i = y0.long()
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)
    flat = x.reshape(b, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    top = gather(y0i, x0i) * (1 - fx) + gather(y0i, x1i) * fx
    bottom = gather(y1i, x0i) * (1 - fx) + gather(y1i, x1i) * fx
    return top * (1 - fy) + bottom * fy


def deformable_sample(x: torch.Tensor, offset: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Gather the 3x3 deformable sampling columns of ``x``.

    Args:
        x: (B, C, H, W).
        offset: (B, 2*G*9, H, W); for group ``g`` and tap ``k`` (row-major over
            the 3x3 kernel) channels ``2*(g*9+k)`` and ``2*(g*9+k)+1`` hold
            (dy, dx).
        mask: (B, G*9, H, W) modulation weights.

    Returns:
        (B, C, 9, H, W): ``mask * x(p + tap + offset)``, bilinear, with zero
        outside the map.
    """
    b, c, h, w = x.shape
    g = mask.shape[1] // 9
    cg = c // g
    off = offset.reshape(b, g, 9, 2, h, w)
    ky = torch.arange(-1, 2, dtype=x.dtype, device=x.device).repeat_interleave(3)
    kx = torch.arange(-1, 2, dtype=x.dtype, device=x.device).repeat(3)
    gy = torch.arange(h, dtype=x.dtype, device=x.device).view(1, 1, 1, h, 1)
    gx = torch.arange(w, dtype=x.dtype, device=x.device).view(1, 1, 1, 1, w)
    # a one-pixel zero border plus clamping to [-1, size] reproduces zero
    # padding: far-out samples land on the border with a zero fraction
    sy = (gy + ky.view(1, 1, 9, 1, 1) + off[:, :, :, 0]).clamp(-1, h)
    sx = (gx + kx.view(1, 1, 9, 1, 1) + off[:, :, :, 1]).clamp(-1, w)
    y0 = torch.nan_to_num(sy.detach(), nan=0.0).floor().clamp(max=h - 1)
    x0 = torch.nan_to_num(sx.detach(), nan=0.0).floor().clamp(max=w - 1)
    fy = sy - y0
    fx = sx - x0
    wp = w + 2
    base = (y0.long() + 1) * wp + (x0.long() + 1)
    m = mask.reshape(b, g, 9, h, w)
    padded = F.pad(x, (1, 1, 1, 1)).reshape(b, g, cg, (h + 2) * wp)
    n = 9 * h * w
    cols = None
    for shift, weight in ((0, (1 - fy) * (1 - fx)), (1, (1 - fy) * fx),
                          (wp, fy * (1 - fx)), (wp + 1, fy * fx)):
        idx = (base + shift).reshape(b, g, 1, n).expand(b, g, cg, n)
        term = padded.gather(3, idx) * (weight * m).reshape(b, g, 1, n)
        cols = term if cols is None else cols + term
    return cols.reshape(b, c, 9, h, w)


def modulated_deform_conv(x, offset, mask, weight, bias=None):
    """3x3 modulated deformable convolution (stride 1, padding 1).

    Sampling follows :func:`deformable_sample`; the result is contracted with
    ``weight`` of shape (C_out, C, 3, 3).
    """
    b, c, h, w = x.shape
    cols = deformable_sample(x, offset, mask).reshape(b, c * 9, h * w)
    out = torch.matmul(weight.reshape(weight.shape[0], c * 9), cols)
    if bias is not None:
        out = out + bias.view(1, -1, 1)
    return out.reshape(b, weight.shape[0], h, w)
