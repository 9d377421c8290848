"""Versioned single-file checkpoints for the generator, discriminator and
training bookkeeping."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from .config import TrainConfig, from_dict
from .discriminator import Discriminator
from .network import MSPN

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    generator: MSPN
    discriminator: Optional[Discriminator] = None
    step: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0
    fingerprint: Optional[str] = None
    optimizer_g: Optional[dict] = None
    optimizer_d: Optional[dict] = None
    trainer_state: dict = field(default_factory=dict)


def build_discriminator(config: TrainConfig) -> Discriminator:
    return Discriminator(config.network.image_channels, config.disc_base_channels,
                         config.disc_stages, norm=config.network.norm)


def save_checkpoint(path, config: TrainConfig, generator: MSPN, discriminator=None, *,
                    step=0, epoch=0, batch_in_epoch=0, optimizer_g=None, optimizer_d=None,
                    trainer_state=None):
    """Write one archive.

    Generator parameters are stored under ``generator`` keyed
    ``cells.level<l>.<submodule>...``; the discriminator under
    ``discriminator`` (absent in pixel-only runs).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "fingerprint": config.fingerprint(),
        "step": step,
        "epoch": epoch,
        "batch_in_epoch": batch_in_epoch,
        "generator": generator.state_dict(),
        "discriminator": discriminator.state_dict() if discriminator is not None else None,
        "optimizer_g": optimizer_g.state_dict() if optimizer_g is not None else None,
        "optimizer_d": optimizer_d.state_dict() if optimizer_d is not None else None,
        "trainer_state": trainer_state or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {version!r}")
    config = from_dict(payload["config"])
    dtype = getattr(torch, config.dtype)
    generator = MSPN(config.network).to(dtype)
    generator.load_state_dict(payload["generator"])
    discriminator = None
    if payload["discriminator"] is not None:
        discriminator = build_discriminator(config).to(dtype)
        discriminator.load_state_dict(payload["discriminator"])
    return Checkpoint(config, generator, discriminator, payload["step"], payload["epoch"],
                      payload["batch_in_epoch"], payload["fingerprint"],
                      payload["optimizer_g"], payload["optimizer_d"], payload["trainer_state"])
