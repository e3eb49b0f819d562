"""Frame-by-frame fusion of aligned features and its ablation variants."""

from __future__ import annotations

from typing import List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import FixedLengthError, InvalidInput, InvalidShape
from .layers import conv3x3, residual_blocks, zero_


class FusionBackbone(nn.Module):
    """Channel-reduction conv, residual blocks, zero-initialized output conv."""

    def __init__(self, in_ch: int, ch: int, n_blocks: int):
        super().__init__()
        self.reduce = conv3x3(in_ch, ch)
        self.blocks = residual_blocks(ch, n_blocks)
        self.tail = zero_(conv3x3(ch, ch))

    def forward(self, x):
        return self.tail(self.blocks(F.leaky_relu(self.reduce(x), 0.1)))


def _check_same(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise InvalidShape(f"feature shapes differ: {tuple(shape)} vs {tuple(t.shape)}")


class RecurrentFusion(nn.Module):
    """Merges ``f_base`` and the aligned features into one state.

    ``kfgr`` and ``baseline`` run ``h_1 = f_base``,
    ``h_i = h_{i-1} + R(cat(...))`` over frames 2..N in order; ``kfgr``
    additionally feeds ``f_base`` to every step. ``reversed`` is ``kfgr``
    visiting the frames back to front. ``bidirectional`` runs a backward
    recurrence first and feeds its states to a forward recurrence. ``sum``
    and ``concat`` drop the recursion and apply one backbone to the mean or
    the channel concatenation of all features.
    """

    def __init__(self, cfg):
        super().__init__()
        self.variant = cfg.fusion_variant
        self.fixed_frames = cfg.fixed_frames
        c, nb = cfg.channels, cfg.fusion_blocks
        if self.variant in ("kfgr", "reversed"):
            self.step_net = FusionBackbone(3 * c, c, nb)
        elif self.variant == "baseline":
            self.step_net = FusionBackbone(2 * c, c, nb)
        elif self.variant == "bidirectional":
            self.backward_net = FusionBackbone(2 * c, c, nb)
            self.step_net = FusionBackbone(3 * c, c, nb)
        elif self.variant == "sum":
            self.step_net = FusionBackbone(c, c, nb)
        elif self.variant == "concat":
            self.step_net = FusionBackbone(cfg.fixed_frames * c, c, nb)

    # single recurrences ---------------------------------------------------

    def step_baseline(self, h_prev, f_aligned):
        _check_same(h_prev, f_aligned)
        return h_prev + self.step_net(torch.cat([h_prev, f_aligned], dim=1))

    def step_kfgr(self, h_prev, f_aligned, f_base):
        _check_same(h_prev, f_aligned, f_base)
        return h_prev + self.step_net(torch.cat([f_base, h_prev, f_aligned], dim=1))

    def step(self, h_prev, f_aligned, f_base):
        if self.variant == "baseline":
            return self.step_baseline(h_prev, f_aligned)
        return self.step_kfgr(h_prev, f_aligned, f_base)

    # whole bursts -----------------------------------------------------------

    def forward(self, f_base, aligned: Sequence[torch.Tensor]):
        return self.states(f_base, aligned, [len(aligned) + 1])[0]

    def states(self, f_base, aligned: Sequence[torch.Tensor], indices: Sequence[int]) -> List[torch.Tensor]:
        """Merged states ``h_i`` for each requested frame count ``i`` (1-based).

        ``h_i`` only depends on the first ``i`` frames. For the forward
        recurrences all requested states come from a single pass.
        """
        if f_base is None or f_base.numel() == 0:
            raise InvalidInput("empty base feature")
        n = len(aligned) + 1
        for i in indices:
            if not 1 <= i <= n:
                raise InvalidInput(f"frame count {i} outside [1, {n}]")
        if self.variant in ("kfgr", "baseline"):
            wanted = set(indices)
            out = {}
            h = f_base
            if 1 in wanted:
                out[1] = h
            for i in range(2, max(indices) + 1):
                h = self.step(h, aligned[i - 2], f_base)
                if i in wanted:
                    out[i] = h
            return [out[i] for i in indices]
        return [self._state(f_base, list(aligned[:i - 1])) for i in indices]

    def _state(self, f_base, aligned: List[torch.Tensor]):
        if self.variant == "reversed":
            h = f_base
            for f in reversed(aligned):
                h = self.step_kfgr(h, f, f_base)
            return h
        if self.variant == "bidirectional":
            back = []
            b = torch.zeros_like(f_base)
            for f in reversed(aligned):
                _check_same(b, f)
                b = b + self.backward_net(torch.cat([b, f], dim=1))
                back.append(b)
            back.reverse()
            h = f_base
            for f, b in zip(aligned, back):
                h = h + self.step_net(torch.cat([h, b, f], dim=1))
            return h
        if self.variant == "sum":
            stack = torch.stack([f_base] + aligned, dim=0)
            # sorting along the frame axis makes the reduction order, and so
            # the rounding, independent of the frame order
            mean = torch.sort(stack, dim=0).values.sum(dim=0) / stack.shape[0]
            return mean + self.step_net(mean)
        if self.variant == "concat":
            n = len(aligned) + 1
            if n != self.fixed_frames:
                raise FixedLengthError(f"concat fusion is built for {self.fixed_frames} frames, got {n}")
            return f_base + self.step_net(torch.cat([f_base] + aligned, dim=1))
        raise AssertionError(self.variant)
