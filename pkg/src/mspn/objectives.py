"""Training objectives: weighted pixel loss and the quadratic score losses."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch

from .pyramid import DimensionError


@dataclass(frozen=True)
class LossWeights:
    levels: int
    adversarial: float = 100.0

    def time(self, t: int) -> float:
        return 0.0 if t == 0 else 1.0

    def level(self, l: int) -> float:
        return (self.levels - l) / self.levels


def _as_scalar(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def _check_finite(*scores):
    for s in scores:
        if not math.isfinite(_as_scalar(s)):
            raise FloatingPointError(f"non-finite score {s!r}")


def pixel_loss(targets: Sequence[Sequence[torch.Tensor]],
               predictions: Sequence[Sequence[torch.Tensor]],
               weights: LossWeights) -> torch.Tensor:
    """Sum over steps and levels of weighted squared Euclidean distances.

    ``targets[t][l]`` and ``predictions[t][l]`` are aligned maps. There is no
    normalisation by element count; a batch dimension, if present, is summed
    as well.
    """
    if len(targets) != len(predictions):
        raise DimensionError(f"{len(targets)} target steps vs {len(predictions)} prediction steps")
    total = None
    for t, (tgt_levels, pred_levels) in enumerate(zip(targets, predictions)):
        if len(tgt_levels) != len(pred_levels):
            raise DimensionError(f"step {t}: {len(tgt_levels)} target levels vs {len(pred_levels)}")
        for l, (y, y_hat) in enumerate(zip(tgt_levels, pred_levels)):
            if y.shape != y_hat.shape:
                raise DimensionError(f"step {t} level {l}: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
            w = weights.time(t) * weights.level(l)
            term = w * ((y - y_hat) ** 2).sum()
            total = term if total is None else total + term
    if total is None:
        return torch.zeros(())
    return total


def discriminator_loss(real_score, fake_score):
    """``(R_s - 1)^2 + (P_s + 1)^2``: real pushed to +1, fake to -1."""
    _check_finite(real_score, fake_score)
    return (real_score - 1) ** 2 + (fake_score + 1) ** 2


def generator_adv_loss(fake_score):
    _check_finite(fake_score)
    return (fake_score - 1) ** 2


def total_generator_loss(pixel, adv, weights: LossWeights):
    return pixel + weights.adversarial * adv
