"""Command-line entry points.

Exit codes: 0 success, 1 usage error (bad flags, missing files or config),
2 runtime or numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
import yaml
from PIL import Image

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, TrainConfig, apply_overrides, from_dict, load_config, save_config
from .data import InputError
from .metrics import evaluate
from .network import PREDICTED_FEEDBACK

OUT_ROOT_ENV = "MSPN_OUT_ROOT"
log = logging.getLogger("mspn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, checkpoint=False):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. network.levels=3 (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --override seed=N")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ROOT_ENV}/<command> or ./runs/<command>)")
    p.add_argument("--device", default="cpu", help="torch device (default: cpu)")
    if checkpoint:
        p.add_argument("--checkpoint", required=True, help="checkpoint archive (.pt)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mspn", description="Multi-scale predictive coding video prediction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate synthetic moving-digit train/test splits")
    _common(p)

    p = sub.add_parser("train", help="train a model; resumes from <out>/checkpoints/latest.pt with --resume")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")

    p = sub.add_parser("eval", help="evaluate a checkpoint with predicted-feedback rollouts")
    _common(p, checkpoint=True)
    p.add_argument("--context", type=int)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("predict", help="save predicted frames for one or more test sequences")
    _common(p, checkpoint=True)
    p.add_argument("--sequence", type=int, nargs="+", default=[0], help="test sequence indices")
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("render", help="write a ground-truth/prediction strip and animation")
    _common(p, checkpoint=True)
    p.add_argument("--sequence", type=int, default=0, help="test sequence index")
    p.add_argument("--horizon", type=int)
    return parser


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / args.command


def _overrides(args):
    extra = list(args.override)
    if args.seed is not None:
        extra.append(f"seed={args.seed}")
    return extra


def _resolve_config(args) -> TrainConfig:
    if args.config and not Path(args.config).is_file():
        raise UsageError(f"config file {args.config} not found")
    return load_config(args.config, _overrides(args))


def _checkpoint_config(args, ckpt) -> TrainConfig:
    """Checkpoint config, updated with any --config/--override data settings."""
    values = ckpt.config.to_dict()
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file {args.config} not found")
        with open(args.config) as fh:
            _merge(values, yaml.safe_load(fh) or {})
    return from_dict(apply_overrides(values, _overrides(args)))


def _merge(base: dict, extra: dict):
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value


def _test_split(config: TrainConfig):
    from .trainer import build_datasets
    train, test = build_datasets(config)
    return test if test is not None else train


def quantize(frames: torch.Tensor) -> np.ndarray:
    """[0,1] floats to uint8 with round-half-even."""
    x = frames.detach().double().clamp(0, 1).cpu().numpy() * 255.0
    return np.rint(x).astype(np.uint8)


def _to_hwc(img: np.ndarray) -> np.ndarray:
    img = img.transpose(1, 2, 0)
    return img[..., 0] if img.shape[-1] == 1 else img


def render_strip(truth: torch.Tensor, pred: torch.Tensor) -> np.ndarray:
    """Grid image: ground truth in the top row, predictions below, one column per step."""
    t, p = quantize(truth), quantize(pred)
    top = np.concatenate([_to_hwc(f) for f in t], axis=1)
    bottom = np.concatenate([_to_hwc(f) for f in p], axis=1)
    return np.concatenate([top, bottom], axis=0)


def cmd_gen_data(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(args)
    from .trainer import build_datasets
    train, test = build_datasets(config)
    train.save(out / "train.npz")
    train.write_manifest(out / "train.manifest.json")
    if test is not None:
        test.save(out / "test.npz")
        test.write_manifest(out / "test.manifest.json")
    config.data.kind = "npz"
    config.data.train_path = str(out / "train.npz")
    config.data.test_path = str(out / "test.npz") if test is not None else None
    save_config(config, out / "config.resolved.yaml")
    print(f"wrote {len(train)} train / {len(test) if test is not None else 0} test sequences to {out}")
    return 0


def cmd_train(args) -> int:
    from .trainer import train
    out = _out_dir(args)
    snapshot = out / "config.resolved.yaml"
    if args.resume and not args.config and snapshot.is_file():
        # Resuming without --config reuses the run's own snapshot.
        config = load_config(snapshot, _overrides(args))
    else:
        config = _resolve_config(args)
    result = train(config, out, resume=args.resume)
    evals = [r for r in result.history if r["type"] == "eval"]
    if evals:
        last = evals[-1]
        print(f"step {result.step}: ssim={last['ssim']:.4f} mse={last['mse']:.6f} psnr={last['psnr']:.2f}")
    print(f"checkpoints in {out / 'checkpoints'}")
    return 0


def _load(args):
    ckpt = load_checkpoint(args.checkpoint)
    config = _checkpoint_config(args, ckpt)
    model = ckpt.generator.to(args.device).eval()
    return ckpt, config, model


def cmd_eval(args) -> int:
    ckpt, config, model = _load(args)
    out = _out_dir(args)
    context = args.context or config.context
    horizon = args.horizon if args.horizon is not None else config.horizon
    dataset = _test_split(config)
    report = evaluate(model, dataset, context, horizon, config.eval_batch_size,
                      report_path=out / "report.jsonl", fingerprint=ckpt.fingerprint)
    save_config(config, out / "config.resolved.yaml")
    print(f"ssim={report.ssim_mean:.4f} mse={report.mse_mean:.6f} psnr={report.psnr_mean:.2f} "
          f"over {report.sequences} sequences; report at {out / 'report.jsonl'}")
    return 0


def _predict(model, dataset, index, context, horizon, device):
    if not 0 <= index < len(dataset):
        raise UsageError(f"sequence index {index} outside 0..{len(dataset) - 1}")
    clip = dataset[index].unsqueeze(0).to(device, next(model.parameters()).dtype)
    with torch.no_grad():
        pred = model.rollout(clip, context, horizon, PREDICTED_FEEDBACK).outputs[0]
    return clip[0], pred


def cmd_predict(args) -> int:
    ckpt, config, model = _load(args)
    out = _out_dir(args)
    horizon = args.horizon if args.horizon is not None else config.horizon
    dataset = _test_split(config)
    out.mkdir(parents=True, exist_ok=True)
    for idx in args.sequence:
        _, pred = _predict(model, dataset, idx, config.context, horizon, args.device)
        np.save(out / f"pred_{idx:06d}.npy", pred.clamp(0, 1).cpu().numpy())
    save_config(config, out / "config.resolved.yaml")
    print(f"wrote {len(args.sequence)} prediction arrays to {out}")
    return 0


def cmd_render(args) -> int:
    ckpt, config, model = _load(args)
    out = _out_dir(args)
    horizon = args.horizon if args.horizon is not None else config.horizon
    dataset = _test_split(config)
    clip, pred = _predict(model, dataset, args.sequence, config.context, horizon, args.device)
    truth = clip[config.context:config.context + horizon]
    if truth.shape[0] < horizon:
        raise UsageError(f"sequence has only {truth.shape[0]} ground-truth frames after the context")
    out.mkdir(parents=True, exist_ok=True)
    stem = f"seq{args.sequence:06d}"
    Image.fromarray(render_strip(truth, pred)).save(out / f"{stem}_strip.png")
    frames = [Image.fromarray(np.concatenate([_to_hwc(a), _to_hwc(b)], axis=1))
              for a, b in zip(quantize(truth), quantize(pred))]
    frames[0].save(out / f"{stem}.gif", save_all=True, append_images=frames[1:], duration=200, loop=0)
    save_config(config, out / "config.resolved.yaml")
    print(f"wrote {out / (stem + '_strip.png')} and {out / (stem + '.gif')}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, CheckpointError, InputError, FileNotFoundError) as exc:
        print(f"mspn {args.command}: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, RuntimeError) as exc:
        print(f"mspn {args.command}: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
