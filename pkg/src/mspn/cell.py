"""Encoder-Decoder LSTM cell.

The gate pre-activations of a convolutional LSTM are produced by a
skip-connected encoder-decoder applied to ``cat(inputs, h_prev)``. The
encoder bottleneck (the semantic code) can be fused with the code handed
down from the level above before decoding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .pyramid import DimensionError, upsample


@dataclass
class CellState:
    h: torch.Tensor
    c: torch.Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise DimensionError(f"h {tuple(self.h.shape)} and c {tuple(self.c.shape)} differ")

    @classmethod
    def zeros(cls, batch, channels, height, width, dtype=torch.float32, device=None):
        z = torch.zeros(batch, channels, height, width, dtype=dtype, device=device)
        return cls(z, z.clone())


@dataclass
class GateBundle:
    """Pre-activation gate maps, channel slices of one codec output."""

    f: torch.Tensor
    i: torch.Tensor
    o: torch.Tensor
    c_hat: torch.Tensor

    @classmethod
    def split(cls, codec_out: torch.Tensor) -> "GateBundle":
        f, i, o, c_hat = torch.chunk(codec_out, 4, dim=1)
        return cls(f, i, o, c_hat)


def lstm_update(gates: GateBundle, c_prev: torch.Tensor):
    f = torch.sigmoid(gates.f)
    i = torch.sigmoid(gates.i)
    o = torch.sigmoid(gates.o)
    c_hat = torch.tanh(gates.c_hat)
    c = f * c_prev + i * c_hat
    h = o * torch.tanh(c)
    return h, c


def _init_conv(conv: nn.Conv2d):
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    bound = 1.0 / math.sqrt(fan_in)
    nn.init.uniform_(conv.weight, -bound, bound)
    if conv.bias is not None:
        nn.init.zeros_(conv.bias)


class CodeFusion(nn.Module):
    """Mix the local code with the code handed down from the level above."""

    def __init__(self, local_channels, higher_channels, kernel_size=3):
        super().__init__()
        self.local_channels = local_channels
        self.higher_channels = higher_channels
        self.mix = nn.Conv2d(local_channels + higher_channels, local_channels,
                             kernel_size, padding=kernel_size // 2)
        _init_conv(self.mix)

    def forward(self, local: torch.Tensor, higher: Optional[torch.Tensor]) -> torch.Tensor:
        if higher is None:
            return local
        if local.shape[-2:] != higher.shape[-2:]:
            raise DimensionError(
                f"code sizes differ: local {tuple(local.shape[-2:])}, higher {tuple(higher.shape[-2:])}"
            )
        return F.relu(self.mix(torch.cat([local, higher], dim=1)))


class EDLSTMCell(nn.Module):
    """One recurrent unit of the hierarchy.

    Args:
        in_channels: total channels of the concatenated input maps.
        hidden_channels: depth of ``h`` and ``c``.
        stages: number of stride-2 encoder stages (and mirrored decoder stages).
        code_channels: depth of the bottleneck code.
        higher_code_channels: depth of the code received from the level above,
            or ``None`` for the top level.
        out_channels: channels of the emitted prediction.
        norm: ``None`` or ``"batch"``; applied after every hidden codec conv.
        forget_bias: constant added to the forget-gate bias at init.
    """

    debug = False

    def __init__(self, in_channels, hidden_channels=64, stages=1, code_channels=32,
                 higher_code_channels=None, out_channels=3, kernel_size=3,
                 norm=None, forget_bias=1.0):
        super().__init__()
        if stages < 1:
            raise ValueError("stages must be >= 1")
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.stages = stages
        self.code_channels = code_channels
        pad = kernel_size // 2

        # Encoder widths grow geometrically up to the code depth.
        widths = [max(1, code_channels // 2 ** (stages - 1 - k)) for k in range(stages)]
        self.widths = widths
        skip_channels = [in_channels + hidden_channels] + widths[:-1]

        self.encoder = nn.ModuleList()
        prev = in_channels + hidden_channels
        for w in widths:
            self.encoder.append(self._block(prev, w, kernel_size, pad, stride=2, norm=norm))
            prev = w

        self.fusion = (CodeFusion(code_channels, higher_code_channels, kernel_size)
                       if higher_code_channels else None)

        # Decoder stage k upsamples to the resolution of skip k and merges it.
        self.decoder = nn.ModuleList()
        prev = widths[-1]
        for k in reversed(range(stages)):
            last = k == 0
            out = 4 * hidden_channels if last else widths[k - 1]
            conv_in = prev + skip_channels[k]
            if last:
                conv = nn.Conv2d(conv_in, out, kernel_size, padding=pad)
                _init_conv(conv)
                with torch.no_grad():
                    conv.bias[:hidden_channels].fill_(forget_bias)
                self.decoder.append(conv)
            else:
                self.decoder.append(self._block(conv_in, out, kernel_size, pad, stride=1, norm=norm))
            prev = out

        self.projection = nn.Conv2d(hidden_channels, out_channels, kernel_size, padding=pad)
        _init_conv(self.projection)

    @staticmethod
    def _block(cin, cout, k, pad, stride, norm):
        conv = nn.Conv2d(cin, cout, k, stride=stride, padding=pad)
        _init_conv(conv)
        layers = [conv]
        if norm == "batch":
            layers.append(nn.BatchNorm2d(cout))
        elif norm is not None:
            raise ValueError(f"unknown norm {norm!r}")
        layers.append(nn.ReLU())
        return nn.Sequential(*layers)

    def init_state(self, batch, height, width, dtype=torch.float32, device=None) -> CellState:
        return CellState.zeros(batch, self.hidden_channels, height, width, dtype, device)

    def codec(self, x: torch.Tensor, higher_code: Optional[torch.Tensor] = None):
        """Run encoder, optional fusion and decoder; return (codec_out, code)."""
        skips = [x]
        z = x
        for block in self.encoder:
            z = block(z)
            skips.append(z)
        skips.pop()  # bottleneck is not a skip
        if self.fusion is not None:
            z = self.fusion(z, higher_code)
        elif higher_code is not None:
            raise ValueError("this cell has no fusion stage but received a higher code")
        code = z
        for stage, skip in zip(self.decoder, reversed(skips)):
            z = stage(torch.cat([upsample(z), skip], dim=1))
        return z, code

    def forward(self, inputs: Sequence[torch.Tensor], state: CellState,
                higher_code: Optional[torch.Tensor] = None):
        """Advance one step.

        ``inputs`` are maps at this cell's resolution; they are concatenated
        in the given order. Returns ``(prediction, new_state, code)``.
        """
        if state is None:
            raise RuntimeError("cell state must be initialised (use init_state)")
        size = state.h.shape[-2:]
        for x in inputs:
            if x.shape[-2:] != size:
                raise DimensionError(
                    f"input of size {tuple(x.shape[-2:])} does not match cell resolution {tuple(size)}"
                )
        x = torch.cat(list(inputs) + [state.h], dim=1)
        if x.shape[1] != self.in_channels + self.hidden_channels:
            raise DimensionError(
                f"expected {self.in_channels} input channels, got {x.shape[1] - self.hidden_channels}"
            )
        codec_out, code = self.codec(x, higher_code)
        gates = GateBundle.split(codec_out)
        h, c = lstm_update(gates, state.c)
        if self.debug and not torch.isfinite(c).all():
            raise FloatingPointError("non-finite cell memory")
        prediction = self.projection(h)
        return prediction, CellState(h, c), code

    def parameter_groups(self) -> dict:
        groups = {
            "encoder": list(self.encoder.parameters()),
            "decoder": list(self.decoder.parameters()),
            "projection": list(self.projection.parameters()),
        }
        if self.fusion is not None:
            groups["fusion"] = list(self.fusion.parameters())
        return groups
