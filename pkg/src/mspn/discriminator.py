"""Residual image scorer producing one unbounded realism score per frame."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .pyramid import DimensionError


class ResidualStage(nn.Module):
    """Two 3x3 convs with a strided 1x1 shortcut; halves the resolution."""

    def __init__(self, cin, cout, norm=None):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.shortcut = nn.Conv2d(cin, cout, 1, stride=2)
        if norm == "batch":
            self.norm1, self.norm2 = nn.BatchNorm2d(cout), nn.BatchNorm2d(cout)
        elif norm is None:
            self.norm1 = self.norm2 = nn.Identity()
        else:
            raise ValueError(f"unknown norm {norm!r}")

    def forward(self, x):
        y = F.leaky_relu(self.norm1(self.conv1(x)), 0.2)
        y = self.norm2(self.conv2(y))
        return F.leaky_relu(y + self.shortcut(x), 0.2)


class Discriminator(nn.Module):
    def __init__(self, image_channels=3, base_channels=16, stages=4, image_size=None, norm=None):
        super().__init__()
        self.image_channels = image_channels
        self.image_size = tuple(image_size) if image_size is not None else None
        widths = [base_channels * 2 ** k for k in range(stages)]
        blocks = []
        cin = image_channels
        for w in widths:
            blocks.append(ResidualStage(cin, w, norm))
            cin = w
        self.stages = nn.Sequential(*blocks)
        self.head = nn.Linear(cin, 1)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """Score a (B,C,H,W) batch; returns shape (B,)."""
        if frames.dim() == 3:
            frames = frames.unsqueeze(0)
        if frames.shape[1] != self.image_channels:
            raise DimensionError(f"expected {self.image_channels} channels, got {frames.shape[1]}")
        if self.image_size is not None and tuple(frames.shape[-2:]) != self.image_size:
            raise DimensionError(f"expected frames of size {self.image_size}, got {tuple(frames.shape[-2:])}")
        z = self.stages(frames)
        return self.head(z.mean(dim=(2, 3))).squeeze(1)

    def score(self, frames: torch.Tensor) -> torch.Tensor:
        """Batch-mean score."""
        return self(frames).mean()
