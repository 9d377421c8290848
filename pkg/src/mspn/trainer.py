"""Training: pixel-loss optimisation, tolerance-gated adversarial alternation
and the predicted-feedback curriculum."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional, Tuple

import numpy as np
import torch

from .checkpoint import build_discriminator, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, save_config
from .data import (SequenceDataset, check_disjoint, ingest_directory, make_splits)
from .metrics import evaluate
from .network import MSPN, PREDICTED_FEEDBACK, TEACHER_FORCED
from .objectives import (LossWeights, discriminator_loss, generator_adv_loss,
                         pixel_loss, total_generator_loss)
from .pyramid import build_pyramid

log = logging.getLogger(__name__)

D_PHASE = "D"
G_PHASE = "G"


class NonFiniteLossError(FloatingPointError):
    pass


def tolerances(real_score: float) -> Tuple[float, float]:
    """Score-window tolerances ``(c1, c2) = (|R_s|/100, |R_s|/50)``."""
    r = abs(real_score)
    return r / 100.0, r / 50.0


@dataclass
class AlternationState:
    phase: str = D_PHASE
    guard: int = 200
    ema_decay: float = 0.9
    real_ema: Optional[float] = None
    c1: float = 0.0
    c2: float = 0.0
    phase_iters: int = 0
    d_steps: int = 0
    g_steps: int = 0
    guard_trips: int = 0
    last_real: Optional[float] = None
    last_fake: Optional[float] = None
    switches: List[dict] = field(default_factory=list)

    def observe(self, real: float, fake: float):
        self.last_real, self.last_fake = real, fake
        if self.real_ema is None:
            self.real_ema = real
        else:
            self.real_ema = self.ema_decay * self.real_ema + (1 - self.ema_decay) * real
        self.c1, self.c2 = tolerances(self.real_ema)

    def exit_holds(self, real: float, fake: float) -> bool:
        if self.phase == D_PHASE:
            return fake < real - self.c1
        return fake > real - self.c2

    def switch(self, reason: str):
        self.switches.append({
            "phase": self.phase, "reason": reason, "iters": self.phase_iters,
            "real": self.last_real, "fake": self.last_fake, "c1": self.c1, "c2": self.c2,
        })
        if reason == "guard":
            self.guard_trips += 1
        self.phase = G_PHASE if self.phase == D_PHASE else D_PHASE
        self.phase_iters = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


Measure = Callable[[object], Tuple[float, float, object]]
Update = Callable[[object], None]


def _run_phase(phase, batches: Iterable, measure: Measure, update: Update,
               state: AlternationState) -> AlternationState:
    if state.phase != phase:
        raise RuntimeError(f"cannot run {phase}-phase while state is in {state.phase}-phase")
    for batch in batches:
        real, fake, ctx = measure(batch)
        state.observe(real, fake)
        if state.exit_holds(real, fake):
            state.switch("condition")
            return state
        update(ctx)
        if phase == D_PHASE:
            state.d_steps += 1
        else:
            state.g_steps += 1
        state.phase_iters += 1
        if state.phase_iters >= state.guard:
            log.warning("%s-phase stalled after %d iterations (R_s=%.4g, P_s=%.4g); forcing switch",
                        phase, state.phase_iters, real, fake)
            state.switch("guard")
            return state
    return state


def train_discriminator_phase(batches, measure: Measure, update: Update,
                              state: AlternationState) -> AlternationState:
    """Step the discriminator until ``P_s < R_s - c1`` or the guard trips.

    ``measure(batch)`` returns ``(R_s, P_s, ctx)``; ``update(ctx)`` performs
    one optimizer step. The condition is checked before each step, so a
    phase entered with the condition already met takes no step. Returns
    early (phase unchanged) if ``batches`` runs out.
    """
    return _run_phase(D_PHASE, batches, measure, update, state)


def train_generator_phase(batches, measure: Measure, update: Update,
                          state: AlternationState) -> AlternationState:
    """Mirror of the discriminator phase with exit ``P_s > R_s - c2``."""
    return _run_phase(G_PHASE, batches, measure, update, state)


# ------------------------------------------------------------------ datasets

def build_datasets(config: TrainConfig) -> Tuple[SequenceDataset, Optional[SequenceDataset]]:
    d = config.data
    n = config.context + config.horizon
    if d.kind == "moving_digits":
        return make_splits(d.train_count, d.test_count, seed=d.seed, digits_per_frame=d.digits,
                           canvas=d.canvas, seq_len=n, glyph_size=d.glyph_size,
                           speed=(d.speed_min, d.speed_max), channels=d.channels)
    if d.kind == "npz":
        train = _existing(SequenceDataset.load, d.train_path)
        test = _existing(SequenceDataset.load, d.test_path) if d.test_path else None
    else:
        divisor = 2 ** config.network.levels
        kw = dict(size=d.size, seq_len=n, stride=d.stride, divisor=divisor, channels=d.channels)
        train = _existing(lambda p: ingest_directory(p, **kw), d.train_path)
        test = _existing(lambda p: ingest_directory(p, **kw), d.test_path) if d.test_path else None
    if train.seq_len < n:
        raise ConfigError(f"training clips have {train.seq_len} frames, need {n}")
    if test is not None:
        check_disjoint(train, test)
    return train, test


def _existing(loader, path):
    if path is None or not Path(path).exists():
        raise FileNotFoundError(
            f"dataset path {path!r} does not exist; create it with `mspn gen-data --out DIR` "
            "or point data.train_path/data.test_path at existing files"
        )
    return loader(path)


# ------------------------------------------------------------------- trainer

@dataclass
class TrainResult:
    checkpoints: List[Path]
    history: List[dict]
    alternation: Optional[AlternationState]
    generator: MSPN
    discriminator: Optional[torch.nn.Module]
    step: int


class Trainer:
    """Owns models, optimizers and bookkeeping for one run directory."""

    def __init__(self, config: TrainConfig, out_dir, train_set=None, test_set=None):
        config.validate()
        if config.adversarial and config.horizon < 1:
            raise ConfigError("adversarial training needs horizon >= 1")
        self.config = config
        self.out_dir = Path(out_dir)
        self.dtype = getattr(torch, config.dtype)
        if train_set is None:
            train_set, test_set = build_datasets(config)
        self.train_set, self.test_set = train_set, test_set

        torch.manual_seed(config.seed)
        self.generator = MSPN(config.network).to(self.dtype)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr_g)
        self.discriminator = None
        self.opt_d = None
        self.alternation = None
        if config.adversarial:
            self.discriminator = build_discriminator(config).to(self.dtype)
            self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=config.lr_d)
            self.alternation = AlternationState(guard=config.guard, ema_decay=config.score_ema)
        self.weights = LossWeights(config.network.levels, config.lambda_adv)

        self.step = 0            # optimizer steps, generator and discriminator combined
        self.batches_seen = 0
        self.epoch = 0
        self.batch_in_epoch = 0
        self.history: List[dict] = []
        self.checkpoints: List[Path] = []
        self.last_fed_back: List[int] = []

    # ---------------------------------------------------------- bookkeeping

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.train_set) / self.config.batch_size)

    @property
    def total_batches(self) -> int:
        total = self.config.epochs * self.batches_per_epoch
        if self.config.max_steps is not None:
            total = min(total, self.config.max_steps)
        return total

    def rollout_mode(self) -> str:
        cfg = self.config
        # batches_seen already counts the batch being processed
        done = max(self.batches_seen - 1, 0)
        if cfg.long_term and done >= cfg.long_term_start * self.total_batches:
            return PREDICTED_FEEDBACK
        return TEACHER_FORCED

    def _log(self, record: dict):
        self.history.append(record)
        with open(self.out_dir / "train_log.jsonl", "a") as fh:
            fh.write(json.dumps(record) + "\n")

    def trainer_state(self) -> dict:
        return {
            "batches_seen": self.batches_seen,
            "alternation": self.alternation.to_dict() if self.alternation else None,
        }

    def save(self, name: str) -> Path:
        path = save_checkpoint(
            self.out_dir / "checkpoints" / name, self.config, self.generator, self.discriminator,
            step=self.step, epoch=self.epoch, batch_in_epoch=self.batch_in_epoch,
            optimizer_g=self.opt_g, optimizer_d=self.opt_d, trainer_state=self.trainer_state())
        latest = self.out_dir / "checkpoints" / "latest.pt"
        if path != latest:
            save_checkpoint(latest, self.config, self.generator, self.discriminator,
                            step=self.step, epoch=self.epoch, batch_in_epoch=self.batch_in_epoch,
                            optimizer_g=self.opt_g, optimizer_d=self.opt_d,
                            trainer_state=self.trainer_state())
        self.checkpoints.append(path)
        return path

    def restore(self, path):
        ckpt = load_checkpoint(path)
        if ckpt.fingerprint != self.config.fingerprint():
            raise ConfigError(f"checkpoint {path} was written with a different config")
        self.generator.load_state_dict(ckpt.generator.state_dict())
        self.opt_g.load_state_dict(ckpt.optimizer_g)
        if self.discriminator is not None:
            self.discriminator.load_state_dict(ckpt.discriminator.state_dict())
            self.opt_d.load_state_dict(ckpt.optimizer_d)
            self.alternation = AlternationState.from_dict(ckpt.trainer_state["alternation"])
        self.step = ckpt.step
        self.epoch = ckpt.epoch
        self.batch_in_epoch = ckpt.batch_in_epoch
        self.batches_seen = ckpt.trainer_state["batches_seen"]
        log_path = self.out_dir / "train_log.jsonl"
        if log_path.exists():
            with open(log_path) as fh:
                self.history = [json.loads(line) for line in fh if line.strip()]

    def _check_finite(self, loss: torch.Tensor, what: str):
        if not torch.isfinite(loss):
            path = self.save("diagnostic.pt")
            raise NonFiniteLossError(f"non-finite {what} loss at step {self.step}; state saved to {path}")

    # --------------------------------------------------------------- passes

    def generate(self, frames: torch.Tensor):
        cfg = self.config
        result = self.generator.rollout(frames, cfg.context, cfg.horizon, self.rollout_mode())
        self.last_fed_back = result.fed_back
        return result

    def targets(self, frames: torch.Tensor):
        steps = self.config.context + self.config.horizon
        return [build_pyramid(frames[:, t], self.config.network.levels,
                              self.config.network.downsample_mode) for t in range(steps)]

    def pixel_loss(self, frames, result):
        return pixel_loss(self.targets(frames), result.level_predictions, self.weights)

    def real_frames(self, frames):
        cfg = self.config
        return frames[:, cfg.context:cfg.context + cfg.horizon].flatten(0, 1)

    def pixel_step(self, frames):
        result = self.generate(frames)
        loss = self.pixel_loss(frames, result)
        self._check_finite(loss, "pixel")
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        self.step += 1
        self._log({"type": "step", "step": self.step, "epoch": self.epoch, "phase": G_PHASE,
                   "loss_pix": loss.item(), "mode": self.rollout_mode()})

    def measure_d(self, frames):
        with torch.no_grad():
            fake_frames = self.generate(frames).outputs.flatten(0, 1)
        real = self.discriminator.score(self.real_frames(frames))
        fake = self.discriminator.score(fake_frames)
        return real.item(), fake.item(), (real, fake)

    def update_d(self, ctx):
        real, fake = ctx
        loss = discriminator_loss(real, fake)
        self._check_finite(loss, "discriminator")
        self.opt_d.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_d.step()
        self.step += 1
        self._log({"type": "step", "step": self.step, "epoch": self.epoch, "phase": D_PHASE,
                   "real": real.item(), "fake": fake.item(), "loss_d": loss.item(),
                   "c1": self.alternation.c1, "c2": self.alternation.c2})

    def measure_g(self, frames):
        result = self.generate(frames)
        self.discriminator.requires_grad_(False)
        try:
            fake = self.discriminator.score(result.outputs.flatten(0, 1))
            with torch.no_grad():
                real = self.discriminator.score(self.real_frames(frames))
        finally:
            self.discriminator.requires_grad_(True)
        return real.item(), fake.item(), (frames, result, real, fake)

    def update_g(self, ctx):
        frames, result, real, fake = ctx
        pix = self.pixel_loss(frames, result)
        adv = generator_adv_loss(fake)
        loss = total_generator_loss(pix, adv, self.weights)
        self._check_finite(loss, "generator")
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        self.step += 1
        self._log({"type": "step", "step": self.step, "epoch": self.epoch, "phase": G_PHASE,
                   "real": real.item(), "fake": fake.item(), "loss_pix": pix.item(),
                   "loss_adv": adv.item(), "loss_g": loss.item(), "mode": self.rollout_mode(),
                   "c1": self.alternation.c1, "c2": self.alternation.c2})

    # ----------------------------------------------------------- evaluation

    def evaluation_set(self):
        if self.test_set is None:
            return None
        n = self.config.eval_count
        return self.test_set if n is None else self.test_set.subset(range(min(n, len(self.test_set))))

    def snapshot(self):
        ds = self.evaluation_set()
        if ds is None or self.config.horizon < 1:
            return None
        report = evaluate(self.generator, ds, self.config.context, self.config.horizon,
                          self.config.eval_batch_size, fingerprint=self.config.fingerprint())
        rec = {"type": "eval", "step": self.step, "batches_seen": self.batches_seen,
               "ssim": report.ssim_mean, "mse": report.mse_mean, "psnr": report.psnr_mean,
               "ssim_steps": report.ssim}
        self._log(rec)
        return report

    # ------------------------------------------------------------ main loop

    def _epoch_stream(self, epoch: int, stop_after: Optional[int] = None) -> Iterator[torch.Tensor]:
        seed = int(np.random.SeedSequence([self.config.seed, epoch]).generate_state(1)[0])
        limit = self.total_batches if stop_after is None else min(stop_after, self.total_batches)
        for k, batch in enumerate(self.train_set.batches(self.config.batch_size, shuffle=True, seed=seed)):
            if k < self.batch_in_epoch:
                continue  # already consumed before a resume
            if self.batches_seen >= limit:
                return
            self.batch_in_epoch = k + 1
            self.batches_seen += 1
            yield batch.to(self.dtype)
            self._between_batches()

    def _between_batches(self):
        cfg = self.config
        if cfg.eval_every and self.batches_seen % cfg.eval_every == 0:
            self.snapshot()
        if cfg.checkpoint_every and self.batches_seen % cfg.checkpoint_every == 0:
            self.save(f"batch_{self.batches_seen:07d}.pt")

    def run(self, stop_after: Optional[int] = None) -> TrainResult:
        """Train until the configured budget is spent.

        ``stop_after`` interrupts after that many batches have been seen in
        total (used to exercise resuming); the latest checkpoint is written.
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        save_config(self.config, self.out_dir / "config.resolved.yaml")
        start = time.monotonic()
        if self.config.eval_at_start and self.batches_seen == 0:
            self.snapshot()
        while self.epoch < self.config.epochs and self.batches_seen < self.total_batches:
            stream = self._epoch_stream(self.epoch, stop_after)
            if self.discriminator is None:
                for frames in stream:
                    self.pixel_step(frames)
            else:
                self._adversarial_epoch(stream)
            if stop_after is not None and self.batches_seen >= stop_after:
                self.save("latest.pt")
                break
            self.epoch += 1
            self.batch_in_epoch = 0
        else:
            if self.config.eval_every == 0 or self.batches_seen % self.config.eval_every:
                self.snapshot()
            self.save("final.pt")
        log.info("trained %d batches in %.1fs", self.batches_seen, time.monotonic() - start)
        return TrainResult(self.checkpoints, self.history, self.alternation,
                           self.generator, self.discriminator, self.step)

    def _adversarial_epoch(self, stream):
        stream = _Peekable(stream)
        state = self.alternation
        while not stream.exhausted():
            before = len(state.switches)
            if state.phase == D_PHASE:
                train_discriminator_phase(stream, self.measure_d, self.update_d, state)
            else:
                train_generator_phase(stream, self.measure_g, self.update_g, state)
            for sw in state.switches[before:]:
                self._log({"type": "switch", "step": self.step, **sw})


class _Peekable:
    def __init__(self, it):
        self._it = iter(it)
        self._buf = []

    def __iter__(self):
        return self

    def __next__(self):
        if self._buf:
            return self._buf.pop()
        return next(self._it)

    def exhausted(self) -> bool:
        if self._buf:
            return False
        try:
            self._buf.append(next(self._it))
        except StopIteration:
            return True
        return False


def train(config: TrainConfig, out_dir, resume: bool = False, train_set=None, test_set=None,
          stop_after: Optional[int] = None) -> TrainResult:
    """Run (or resume) training in ``out_dir``; returns the checkpoint series and history."""
    trainer = Trainer(config, out_dir, train_set, test_set)
    latest = Path(out_dir) / "checkpoints" / "latest.pt"
    if resume and latest.exists():
        trainer.restore(latest)
    return trainer.run(stop_after=stop_after)
