"""Sequence datasets: synthetic bouncing digits and frame-folder ingestion."""
from __future__ import annotations

import gzip
import hashlib
import json
import logging
import math
from importlib import resources
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif", ".webp"}
MANIFEST_VERSION = 1


class InputError(ValueError):
    pass


class SequenceDataset:
    """Fixed-length clips stored as uint8 ``(N, n, C, H, W)``.

    Items come out as float tensors in [0,1] with ``channels`` channels;
    single-channel storage is replicated on the fly.
    """

    def __init__(self, frames: np.ndarray, ids: Optional[Sequence[str]] = None,
                 channels: int = 3, source: str = "synthetic", meta: Optional[dict] = None):
        if frames.ndim != 5:
            raise InputError(f"expected (N, n, C, H, W) frames, got shape {frames.shape}")
        if frames.dtype != np.uint8:
            raise InputError("frames must be uint8")
        if frames.shape[2] not in (1, channels):
            raise InputError(f"cannot map {frames.shape[2]} stored channels to {channels}")
        self.frames = frames
        self.ids = list(ids) if ids is not None else [f"{source}-{i:06d}" for i in range(len(frames))]
        if len(self.ids) != len(frames):
            raise InputError("ids and frames differ in length")
        self.channels = channels
        self.source = source
        self.meta = meta or {}

    def __len__(self):
        return len(self.frames)

    @property
    def seq_len(self) -> int:
        return self.frames.shape[1]

    @property
    def frame_size(self):
        return tuple(self.frames.shape[-2:])

    def _to_tensor(self, arr: np.ndarray) -> torch.Tensor:
        x = torch.from_numpy(arr.astype(np.float32) / 255.0)
        if x.shape[-3] != self.channels:
            x = x.expand(*x.shape[:-3], self.channels, *x.shape[-2:]).contiguous()
        return x

    def __getitem__(self, idx) -> torch.Tensor:
        return self._to_tensor(self.frames[idx])

    def batches(self, batch_size: int, shuffle: bool = False, seed: int = 0,
                drop_last: bool = False) -> Iterator[torch.Tensor]:
        order = np.arange(len(self))
        if shuffle:
            order = np.random.default_rng(seed).permutation(len(self))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            if drop_last and len(idx) < batch_size:
                break
            yield self._to_tensor(self.frames[idx])

    def subset(self, indices) -> "SequenceDataset":
        indices = list(indices)
        return SequenceDataset(self.frames[indices], [self.ids[i] for i in indices],
                               self.channels, self.source, dict(self.meta))

    def sequence_hashes(self) -> List[str]:
        return [hashlib.sha256(clip.tobytes()).hexdigest() for clip in self.frames]

    def manifest(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "source": self.source,
            "count": len(self),
            "seq_len": self.seq_len,
            "frame_size": list(self.frame_size),
            "ids": self.ids,
            "hashes": self.sequence_hashes(),
            "meta": self.meta,
        }

    def write_manifest(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.manifest(), indent=1, sort_keys=True))

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(path, frames=self.frames, ids=np.array(self.ids),
                            channels=self.channels, source=self.source,
                            meta=json.dumps(self.meta, sort_keys=True))

    @classmethod
    def load(cls, path) -> "SequenceDataset":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["frames"], [str(i) for i in z["ids"]], int(z["channels"]),
                       str(z["source"]), json.loads(str(z["meta"])))


# ---------------------------------------------------------------- glyphs

def bundled_glyphs() -> np.ndarray:
    """100 handwritten digit glyphs (10 per class), uint8 (100, 28, 28)."""
    with resources.files("mspn").joinpath("assets/glyphs.npz").open("rb") as fh:
        with np.load(fh) as z:
            return z["glyphs"].copy()


def load_mnist_glyphs(path, limit: Optional[int] = None) -> np.ndarray:
    """Read an idx3-ubyte image file (optionally gzipped) into uint8 (N, 28, 28)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    magic, n, rows, cols = np.frombuffer(raw[:16], dtype=">u4")
    if magic != 2051:
        raise InputError(f"{path} is not an idx3 image file (magic {magic})")
    images = np.frombuffer(raw[16:], dtype=np.uint8).reshape(n, rows, cols)
    return images[:limit].copy() if limit else images.copy()


def _resize_glyphs(glyphs: np.ndarray, size: int) -> np.ndarray:
    if glyphs.shape[-1] == size and glyphs.shape[-2] == size:
        return glyphs
    return np.stack([np.asarray(Image.fromarray(g).resize((size, size), Image.BILINEAR)) for g in glyphs])


# ------------------------------------------------------ moving digits

def bounce_positions(start: float, velocity: float, steps: int, limit: float) -> np.ndarray:
    """Positions of a point moving at constant speed inside [0, limit], reflecting at both walls."""
    pos = np.empty(steps)
    x, v = float(start), float(velocity)
    for k in range(steps):
        pos[k] = x
        x += v
        if x < 0:
            x, v = -x, -v
        elif x > limit:
            x, v = 2 * limit - x, -v
    return pos


def render_frame(canvas: int, glyphs: Sequence[np.ndarray], positions) -> np.ndarray:
    frame = np.zeros((canvas, canvas), np.uint8)
    for g, (y, x) in zip(glyphs, positions):
        gy, gx = int(round(y)), int(round(x))
        h, w = g.shape
        np.maximum(frame[gy:gy + h, gx:gx + w], g, out=frame[gy:gy + h, gx:gx + w])
    return frame


def generate_moving_digits(count: int, digits_per_frame: int = 2, canvas: int = 64,
                           seq_len: int = 20, seed: int = 0, glyph_size: Optional[int] = None,
                           speed: tuple = (2.0, 4.0), glyphs: Optional[np.ndarray] = None,
                           channels: int = 3, id_prefix: str = "mm") -> SequenceDataset:
    """Bouncing-digit clips in the Moving-MNIST style.

    Each digit gets a random glyph, start position and constant velocity of
    magnitude drawn from ``speed``; it reflects off the canvas walls.
    Overlapping digits are composited by pixel max. Deterministic in ``seed``.
    """
    if glyphs is None:
        glyphs = bundled_glyphs()
    if glyph_size is None:
        glyph_size = min(glyphs.shape[-1], max(8, canvas * 28 // 64))
    if canvas < glyph_size:
        raise InputError(f"canvas {canvas} is smaller than glyph size {glyph_size}")
    glyphs = _resize_glyphs(glyphs, glyph_size)
    limit = canvas - glyph_size
    rng = np.random.default_rng(seed)

    frames = np.zeros((count, seq_len, 1, canvas, canvas), np.uint8)
    trajectories = np.zeros((count, digits_per_frame, seq_len, 2))
    velocities = np.zeros((count, digits_per_frame, 2))
    for i in range(count):
        chosen = glyphs[rng.integers(len(glyphs), size=digits_per_frame)]
        for d in range(digits_per_frame):
            y0, x0 = rng.uniform(0, limit, size=2)
            theta = rng.uniform(0, 2 * math.pi)
            s = rng.uniform(*speed)
            velocities[i, d] = s * math.sin(theta), s * math.cos(theta)
            trajectories[i, d, :, 0] = bounce_positions(y0, velocities[i, d, 0], seq_len, limit)
            trajectories[i, d, :, 1] = bounce_positions(x0, velocities[i, d, 1], seq_len, limit)
        for k in range(seq_len):
            frames[i, k, 0] = render_frame(canvas, chosen, trajectories[i, :, k])
    meta = {"kind": "moving_digits", "seed": seed, "digits": digits_per_frame,
            "canvas": canvas, "glyph_size": glyph_size, "speed": list(speed)}
    ds = SequenceDataset(frames, [f"{id_prefix}-{seed}-{i:06d}" for i in range(count)],
                         channels, "synthetic", meta)
    ds.trajectories = trajectories
    ds.velocities = velocities
    return ds


def make_splits(train_count: int, test_count: int, seed: int = 0, **kwargs):
    """Independent train/test sets from derived seeds; raises if any clip repeats."""
    seeds = np.random.SeedSequence(seed).generate_state(2)
    train = generate_moving_digits(train_count, seed=int(seeds[0]), id_prefix="train", **kwargs)
    test = generate_moving_digits(test_count, seed=int(seeds[1]), id_prefix="test", **kwargs)
    check_disjoint(train, test)
    return train, test


def check_disjoint(a: SequenceDataset, b: SequenceDataset):
    overlap = set(a.sequence_hashes()) & set(b.sequence_hashes())
    if overlap:
        raise InputError(f"{len(overlap)} sequences appear in both splits")


# ----------------------------------------------------------- ingestion

def window_starts(num_frames: int, seq_len: int, stride: int) -> List[int]:
    if stride < 1:
        raise InputError("stride must be >= 1")
    if num_frames < seq_len:
        return []
    return list(range(0, num_frames - seq_len + 1, stride))


def _load_frame(path: Path, size, divisor: int, channels: int) -> np.ndarray:
    img = Image.open(path)
    img = img.convert("L" if channels == 1 else "RGB")
    if size is not None:
        h, w = size
        img = img.resize((w, h), Image.BILINEAR)
    arr = np.asarray(img, np.uint8)
    if arr.ndim == 2:
        arr = arr[..., None]
    H, W = arr.shape[:2]
    ch, cw = H - H % divisor, W - W % divisor
    top, left = (H - ch) // 2, (W - cw) // 2
    return arr[top:top + ch, left:left + cw].transpose(2, 0, 1)


def ingest_directory(path, size=None, seq_len: int = 20, stride: int = 10, divisor: int = 1,
                     channels: int = 3, on_error: str = "skip",
                     manifest_path=None) -> SequenceDataset:
    """Cut every video folder under ``path`` into ``seq_len``-frame clips.

    ``path`` holds one sub-folder per video with frames as images, ordered
    lexicographically. Frames are resized to ``size`` (H, W) when given and
    center-cropped so both sides divide ``divisor``. Unreadable frames are
    skipped with a warning (``on_error="skip"``) or abort (``"abort"``).
    """
    if on_error not in ("skip", "abort"):
        raise ValueError("on_error must be 'skip' or 'abort'")
    root = Path(path)
    if not root.is_dir():
        raise InputError(f"{root} is not a directory")
    clips, ids = [], []
    for video in sorted(p for p in root.iterdir() if p.is_dir()):
        frames = []
        for f in sorted(p for p in video.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
            try:
                frames.append(_load_frame(f, size, divisor, channels))
            except (OSError, ValueError) as exc:
                if on_error == "abort":
                    raise InputError(f"cannot read frame {f}: {exc}") from exc
                log.warning("skipping unreadable frame %s: %s", f, exc)
        if frames and len({fr.shape for fr in frames}) > 1:
            raise InputError(f"frames in {video} differ in size; pass size= to resize")
        for start in window_starts(len(frames), seq_len, stride):
            clips.append(np.stack(frames[start:start + seq_len]))
            ids.append(f"{video.name}/{start:06d}")
    if not clips:
        raise InputError(f"no clips of {seq_len} frames found under {root}")
    shapes = {c.shape for c in clips}
    if len(shapes) > 1:
        raise InputError("videos differ in frame size; pass size= to resize")
    ds = SequenceDataset(np.stack(clips), ids, channels, "directory",
                         {"kind": "directory", "root": str(root), "seq_len": seq_len, "stride": stride})
    if manifest_path is not None:
        ds.write_manifest(manifest_path)
    return ds
