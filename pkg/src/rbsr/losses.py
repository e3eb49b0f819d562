"""Training objectives.

All three losses are mean absolute errors on linear RGB. The implicit
weighting loss adds, to the error of the full-burst output, the error of the
output after a uniformly drawn number of frames ``i`` in ``[1, N-1]``, so the
last recurrence is always supervised while every earlier one is supervised
on average ``1/(N-1)`` of the time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import InvalidBurstLength, InvalidShape

LOSS_VARIANTS = ("last_only", "every_step", "implicit_weighting")


@dataclass
class LossValue:
    value: torch.Tensor
    sampled_index: Optional[int] = None

    def __float__(self) -> float:
        return float(self.value.detach())


def _l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise InvalidShape(f"prediction {tuple(pred.shape)} does not match target {tuple(target.shape)}")
    return (pred - target).abs().mean()


def l1_loss(pred, target) -> LossValue:
    return LossValue(_l1(pred, target))


def sample_index(n: int, rng: np.random.Generator) -> int:
    """Uniform draw from {1, ..., n-1}."""
    if n < 2:
        raise InvalidBurstLength(f"the implicit weighting loss needs N >= 2, got {n}")
    return int(rng.integers(1, n))


def implicit_weighting_loss(model, burst, target, rng: np.random.Generator, flows=None) -> LossValue:
    n = burst.shape[1]
    i = sample_index(n, rng)
    y_i, y_n = model.forward_intermediates(burst, [i, n], flows)
    return LossValue(_l1(y_i, target) + _l1(y_n, target), sampled_index=i)


def every_step_loss(model, burst, target, flows=None) -> LossValue:
    n = burst.shape[1]
    if n == 1:
        return l1_loss(model(burst, flows), target)
    outs = model.forward_intermediates(burst, list(range(1, n + 1)), flows)
    return LossValue(sum(_l1(y, target) for y in outs) / n)


def last_only_loss(model, burst, target, flows=None) -> LossValue:
    return l1_loss(model(burst, flows), target)


def compute_loss(variant: str, model, burst, target, rng, flows=None) -> LossValue:
    """Dispatch on the training loss variant.

    A single-frame burst always falls back to the plain l1 loss.
    """
    if variant == "last_only" or burst.shape[1] == 1:
        return last_only_loss(model, burst, target, flows)
    if variant == "every_step":
        return every_step_loss(model, burst, target, flows)
    if variant == "implicit_weighting":
        return implicit_weighting_loss(model, burst, target, rng, flows)
    raise ValueError(f"unknown loss variant {variant!r}")
