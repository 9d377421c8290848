"""Multi-resolution frame targets and two-population prediction errors."""
from __future__ import annotations

from typing import List

import torch
import torch.nn.functional as F

DOWNSAMPLE_MODES = ("avg", "nearest")


class DimensionError(ValueError):
    """Raised when tensor shapes do not satisfy a resolution contract."""


def _as_batch(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise DimensionError(f"expected (C,H,W) or (B,C,H,W), got shape {tuple(x.shape)}")


def downsample(x: torch.Tensor, mode: str = "avg") -> torch.Tensor:
    """Halve the spatial size of a (B,C,H,W) map.

    ``avg`` is 2x2 mean pooling, ``nearest`` keeps the top-left pixel of
    every 2x2 block (interval sampling).
    """
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise DimensionError(f"cannot halve odd spatial size {tuple(x.shape[-2:])}")
    if mode == "avg":
        return F.avg_pool2d(x, 2)
    if mode == "nearest":
        return x[..., ::2, ::2]
    raise ValueError(f"unknown downsample mode {mode!r}; choose from {DOWNSAMPLE_MODES}")


def upsample(x: torch.Tensor) -> torch.Tensor:
    """Nearest-neighbour 2x upsampling of a (B,C,H,W) map."""
    return F.interpolate(x, scale_factor=2, mode="nearest")


def build_pyramid(frame: torch.Tensor, levels: int, mode: str = "avg") -> List[torch.Tensor]:
    """Return ``levels`` images, level ``l`` at resolution (H/2^l, W/2^l).

    Accepts a single image (3,H,W) or a batch (B,3,H,W); the output keeps the
    input's rank. Level 0 is the input tensor itself.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    x, squeezed = _as_batch(frame)
    h, w = x.shape[-2:]
    out = [x]
    for level in range(1, levels):
        factor = 2 ** level
        if h % factor or w % factor:
            raise DimensionError(
                f"frame of size {h}x{w} cannot be reduced to level {level} "
                f"(needs divisibility by {factor})"
            )
        out.append(downsample(out[-1], mode))
    if squeezed:
        out = [lvl.squeeze(0) for lvl in out]
    return out


def compute_error(target: torch.Tensor, prediction: torch.Tensor) -> torch.Tensor:
    """Concatenate positive and negative error populations along channels.

    Channels ``[:C]`` hold ``relu(target - prediction)`` and ``[C:]`` hold
    ``relu(prediction - target)``. Works on (C,H,W) or (B,C,H,W).
    """
    if target.shape != prediction.shape:
        raise DimensionError(
            f"target {tuple(target.shape)} and prediction {tuple(prediction.shape)} differ"
        )
    diff = target - prediction
    channel_dim = -3
    return torch.cat([F.relu(diff), F.relu(-diff)], dim=channel_dim)
