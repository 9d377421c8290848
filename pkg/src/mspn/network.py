"""Multi-scale predictive network: coarse-to-fine top-down predictions and
bottom-up prediction errors over a hierarchy of EDLSTM cells."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn as nn

from .cell import CellState, EDLSTMCell
from .pyramid import DimensionError, build_pyramid, compute_error, downsample, upsample

TEACHER_FORCED = "teacher_forced"
PREDICTED_FEEDBACK = "predicted_feedback"
MODES = (TEACHER_FORCED, PREDICTED_FEEDBACK)


class ContractViolation(RuntimeError):
    pass


class InputError(ValueError):
    pass


@dataclass
class NetworkConfig:
    levels: int = 4
    image_channels: int = 3
    hidden_channels: int = 64
    # Code depth of the top level; it doubles at every level downwards.
    code_channels: int = 16
    sensory_input: bool = True
    downsample_mode: str = "avg"
    norm: Optional[str] = None
    forget_bias: float = 1.0
    kernel_size: int = 3

    def code_depth(self, level: int) -> int:
        return self.code_channels * 2 ** (self.levels - 1 - level)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class LevelState:
    cell: CellState
    error: torch.Tensor
    frame: torch.Tensor
    prediction: Optional[torch.Tensor] = None
    code: Optional[torch.Tensor] = None
    error_t: int = -1
    prediction_t: int = -1


@dataclass
class NetworkState:
    levels: List[LevelState]
    t: int = 0
    mode: str = TEACHER_FORCED

    def predictions(self):
        return [lvl.prediction for lvl in self.levels]

    def errors(self):
        return [lvl.error for lvl in self.levels]


@dataclass
class RolloutResult:
    outputs: torch.Tensor                      # (B, m, C, H, W) level-0 predictions for the horizon
    level_predictions: List[List[torch.Tensor]]  # [t][l] for every processed step
    state: NetworkState
    fed_back: List[int] = field(default_factory=list)  # steps whose bottom-up pass used predictions


class MSPN(nn.Module):
    def __init__(self, config: NetworkConfig = None, **overrides):
        super().__init__()
        config = config or NetworkConfig()
        if overrides:
            config = dataclasses.replace(config, **overrides)
        self.config = config
        L = config.levels
        C = config.image_channels
        self.cells = nn.ModuleDict()
        for level in range(L):
            self.cells[f"level{level}"] = EDLSTMCell(
                in_channels=self.input_channels(level),
                hidden_channels=config.hidden_channels,
                stages=L - level,
                code_channels=config.code_depth(level),
                higher_code_channels=config.code_depth(level + 1) if level < L - 1 else None,
                out_channels=C,
                kernel_size=config.kernel_size,
                norm=config.norm,
                forget_bias=config.forget_bias,
            )
        # When set to a list, every cell invocation appends a record of its inputs.
        self.trace = None

    @property
    def levels(self) -> int:
        return self.config.levels

    def cell(self, level: int) -> EDLSTMCell:
        return self.cells[f"level{level}"]

    def input_channels(self, level: int) -> int:
        C = self.config.image_channels
        n = 2 * C
        if level > 0:
            n += 2 * C
        if level < self.config.levels - 1:
            n += C
        if self.config.sensory_input:
            n += C
        return n

    def check_resolution(self, height: int, width: int):
        factor = 2 ** self.config.levels
        if height % factor or width % factor:
            raise DimensionError(
                f"frame size {height}x{width} must be divisible by {factor} for {self.config.levels} levels"
            )

    def init_state(self, batch, height, width, mode=TEACHER_FORCED, dtype=None, device=None) -> NetworkState:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.check_resolution(height, width)
        if dtype is None:
            dtype = next(self.parameters()).dtype
        C = self.config.image_channels
        levels = []
        for level in range(self.config.levels):
            h, w = height >> level, width >> level
            levels.append(LevelState(
                cell=self.cell(level).init_state(batch, h, w, dtype, device),
                error=torch.zeros(batch, 2 * C, h, w, dtype=dtype, device=device),
                frame=torch.zeros(batch, C, h, w, dtype=dtype, device=device),
            ))
        return NetworkState(levels, t=0, mode=mode)

    def step_top_down(self, state: NetworkState) -> List[torch.Tensor]:
        """Run every cell once, from the top level down, producing P_t^l."""
        L = self.config.levels
        for level, lvl in enumerate(state.levels):
            if lvl.prediction_t == state.t:
                raise ContractViolation(f"top-down pass already ran for step {state.t}")
            if lvl.error_t != state.t - 1:
                raise ContractViolation(
                    f"level {level} error is from step {lvl.error_t}, expected {state.t - 1}"
                )
        higher_pred = None
        higher_code = None
        for level in reversed(range(L)):
            lvl = state.levels[level]
            names = [("E", level)]
            inputs = [lvl.error]
            if level > 0:
                names.append(("E", level - 1))
                inputs.append(downsample(state.levels[level - 1].error, self.config.downsample_mode))
            if level < L - 1:
                names.append(("P", level + 1))
                inputs.append(upsample(higher_pred))
            if self.config.sensory_input:
                names.append(("f", level))
                inputs.append(lvl.frame)
            if self.trace is not None:
                if self.trace and self.trace[-1]["t"] == state.t and self.trace[-1]["level"] <= level:
                    raise ContractViolation("levels must be processed top-down")
                self.trace.append({
                    "t": state.t,
                    "level": level,
                    "inputs": names,
                    "tensors": [x.detach().clone() for x in inputs],
                    "code_from": level + 1 if higher_code is not None else None,
                    "code": None if higher_code is None else higher_code.detach().clone(),
                })
            pred, lvl.cell, code = self.cell(level)(inputs, lvl.cell, higher_code)
            lvl.prediction = pred
            lvl.code = code
            lvl.prediction_t = state.t
            higher_pred, higher_code = pred, code
        return state.predictions()

    def step_bottom_up(self, state: NetworkState, frame: Optional[torch.Tensor] = None) -> List[torch.Tensor]:
        """Refresh E_t^l at every level and advance the clock.

        With ``frame`` the targets are its pyramid; with ``frame=None`` they
        are the pyramid of the level-0 prediction (predicted feedback).
        """
        for level, lvl in enumerate(state.levels):
            if lvl.prediction is None or lvl.prediction_t != state.t:
                raise ContractViolation(f"level {level} has no prediction for step {state.t}")
        source = state.levels[0].prediction if frame is None else frame
        targets = build_pyramid(source, self.config.levels, self.config.downsample_mode)
        for lvl, target in zip(state.levels, targets):
            lvl.error = compute_error(target, lvl.prediction)
            lvl.frame = target
            lvl.error_t = state.t
        state.t += 1
        return state.errors()

    def rollout(self, frames: torch.Tensor, context: int, horizon: int,
                mode: str = PREDICTED_FEEDBACK, state: Optional[NetworkState] = None) -> RolloutResult:
        """Process ``context + horizon`` steps of a (B, n, C, H, W) batch.

        The first ``context`` bottom-up passes always see ground truth. After
        that, ``predicted_feedback`` feeds the level-0 prediction back while
        ``teacher_forced`` keeps consuming ground truth.
        """
        if frames.dim() != 5:
            raise DimensionError(f"expected (B, n, C, H, W) frames, got {tuple(frames.shape)}")
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        n = frames.shape[1]
        if context < 0 or horizon < 0:
            raise InputError("context and horizon must be non-negative")
        if n < context:
            raise InputError(f"sequence of {n} frames is shorter than context {context}")
        if mode == TEACHER_FORCED and n < context + horizon:
            raise InputError(
                f"teacher forcing over {context + horizon} steps needs that many frames, got {n}"
            )
        B, _, _, H, W = frames.shape
        if state is None:
            state = self.init_state(B, H, W, mode, dtype=frames.dtype, device=frames.device)
        state.mode = mode
        level_predictions = []
        fed_back = []
        outputs = []
        for step in range(context + horizon):
            preds = self.step_top_down(state)
            level_predictions.append(list(preds))
            if step >= context:
                outputs.append(preds[0])
            if step < context or mode == TEACHER_FORCED:
                self.step_bottom_up(state, frames[:, step])
            else:
                fed_back.append(state.t)
                self.step_bottom_up(state, None)
        if outputs:
            out = torch.stack(outputs, dim=1)
        else:
            out = frames.new_zeros((B, 0) + tuple(frames.shape[2:]))
        return RolloutResult(out, level_predictions, state, fed_back)

    def forward(self, frames, context, horizon, mode=PREDICTED_FEEDBACK):
        return self.rollout(frames, context, horizon, mode)
