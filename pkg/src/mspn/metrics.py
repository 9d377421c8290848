"""Image quality metrics and the horizon evaluation protocol."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .pyramid import DimensionError

REPORT_SCHEMA_VERSION = 1
MSE_REDUCTION = "mean over all pixels, channels and sequences; pixel range [0,1]"


def gaussian_window(size=11, sigma=1.5, dtype=torch.float64):
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-coords ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def _to_chw(x) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=torch.float64)
    if x.dim() == 2:
        x = x.unsqueeze(0)
    return x


def ssim_map(x, y, max_val=1.0, window_size=11, sigma=1.5):
    """Per-window SSIM values for images shaped (...,C,H,W), 'valid' windows only."""
    x, y = _to_chw(x), _to_chw(y)
    if x.shape != y.shape:
        raise DimensionError(f"ssim inputs differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape[-2:]) < window_size:
        raise DimensionError(f"images of size {tuple(x.shape[-2:])} are smaller than the {window_size}px window")
    lead = x.shape[:-2]
    x = x.reshape(-1, 1, *x.shape[-2:])
    y = y.reshape(-1, 1, *y.shape[-2:])
    w = gaussian_window(window_size, sigma)[None, None]
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2

    mu_x = F.conv2d(x, w)
    mu_y = F.conv2d(y, w)
    xx = F.conv2d(x * x, w) - mu_x * mu_x
    yy = F.conv2d(y * y, w) - mu_y * mu_y
    xy = F.conv2d(x * y, w) - mu_x * mu_y
    num = (2 * (mu_x * mu_y) + c1) * (2 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    out = num / den
    return out.reshape(*lead, *out.shape[-2:])


def ssim(x, y, max_val=1.0) -> float:
    """Mean SSIM over all windows and channels of a single image."""
    return float(ssim_map(x, y, max_val).mean())


def mse(x, y) -> float:
    x = torch.as_tensor(x, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=torch.float64)
    if x.shape != y.shape:
        raise DimensionError(f"mse inputs differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    return float(((x - y) ** 2).mean())


def psnr_from_mse(err: float, max_val=1.0) -> float:
    if err == 0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / err)


def psnr(x, y, max_val=1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    return psnr_from_mse(mse(x, y), max_val)


@dataclass
class MetricReport:
    context: int
    horizon: int
    sequences: int
    ssim: List[float]
    mse: List[float]
    psnr: List[float]
    ssim_mean: float
    mse_mean: float
    psnr_mean: float
    psnr_infinite: bool = False
    external: Dict[str, List[float]] = field(default_factory=dict)
    fingerprint: Optional[str] = None
    mse_reduction: str = MSE_REDUCTION
    schema_version: int = REPORT_SCHEMA_VERSION

    @property
    def frames(self) -> int:
        return self.sequences * self.horizon

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        """Write one JSON line per horizon step followed by a summary line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for k in range(self.horizon):
                rec = {"type": "step", "step": k + 1, "ssim": self.ssim[k],
                       "mse": self.mse[k], "psnr": _json_float(self.psnr[k])}
                for name, values in self.external.items():
                    rec[name] = values[k]
                fh.write(json.dumps(rec) + "\n")
            summary = self.to_dict()
            summary["psnr"] = [_json_float(v) for v in self.psnr]
            summary["psnr_mean"] = _json_float(self.psnr_mean)
            summary["type"] = "summary"
            summary["frames"] = self.frames
            fh.write(json.dumps(summary) + "\n")

    @classmethod
    def read(cls, path) -> "MetricReport":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        summary = next(r for r in lines if r.get("type") == "summary")
        summary = {k: v for k, v in summary.items() if k not in ("type", "frames")}
        summary["psnr"] = [_from_json_float(v) for v in summary["psnr"]]
        summary["psnr_mean"] = _from_json_float(summary["psnr_mean"])
        return cls(**summary)


def _json_float(v):
    return "inf" if math.isinf(v) else v


def _from_json_float(v):
    return math.inf if v == "inf" else v


Predictor = Callable[[torch.Tensor, int, int], torch.Tensor]


def copy_last_frame(frames: torch.Tensor, context: int, horizon: int) -> torch.Tensor:
    """Baseline that repeats the last context frame over the horizon."""
    last = frames[:, context - 1:context]
    return last.expand(-1, horizon, *last.shape[2:]).clone()


def model_predictor(model) -> Predictor:
    from .network import PREDICTED_FEEDBACK

    def predict(frames, context, horizon):
        return model.rollout(frames, context, horizon, PREDICTED_FEEDBACK).outputs
    return predict


def evaluate(model, dataset, context=10, horizon=10, batch_size=16,
             external_metrics: Optional[Dict[str, Callable]] = None,
             report_path=None, fingerprint=None) -> MetricReport:
    """Score predicted-feedback rollouts over a dataset.

    ``model`` is an MSPN, a checkpoint path, or any callable
    ``(frames, context, horizon) -> predictions``. Predictions are clipped
    to [0,1] before scoring. SSIM is averaged per frame, then over frames;
    PSNR is derived from the aggregated MSE so the two always agree.
    ``external_metrics`` maps a name to ``f(pred, target) -> float`` applied
    per frame and averaged per step.
    """
    from .network import MSPN

    if isinstance(model, (str, Path)):
        from .checkpoint import load_checkpoint
        ckpt = load_checkpoint(model)
        model = ckpt.generator
        fingerprint = fingerprint or ckpt.fingerprint
    if isinstance(model, MSPN):
        was_training = model.training
        model.eval()
        predictor = model_predictor(model)
    else:
        was_training = None
        predictor = model
    external_metrics = external_metrics or {}

    ssim_sum = np.zeros(horizon)
    sq_sum = np.zeros(horizon)
    ext_sum = {name: np.zeros(horizon) for name in external_metrics}
    count = 0
    elements_per_frame = None
    with torch.no_grad():
        for batch in dataset.batches(batch_size, shuffle=False):
            n_needed = context + horizon
            if batch.shape[1] < n_needed:
                raise ValueError(f"sequences of {batch.shape[1]} frames cannot serve {context}->{horizon}")
            if isinstance(model, MSPN):
                batch = batch.to(next(model.parameters()).dtype)
            pred = predictor(batch, context, horizon).clamp(0, 1).double()
            truth = batch[:, context:context + horizon].double()
            elements_per_frame = truth[0, 0].numel()
            sq_sum += ((pred - truth) ** 2).sum(dim=(0, 2, 3, 4)).numpy()
            per_frame = ssim_map(pred, truth).mean(dim=(-3, -2, -1))  # (B, m)
            ssim_sum += per_frame.sum(dim=0).numpy()
            for name, fn in external_metrics.items():
                for b in range(pred.shape[0]):
                    for k in range(horizon):
                        ext_sum[name][k] += float(fn(pred[b, k], truth[b, k]))
            count += batch.shape[0]
    if was_training:
        model.train()
    if count == 0:
        raise ValueError("empty dataset")

    ssim_steps = (ssim_sum / count).tolist()
    mse_steps = (sq_sum / (count * elements_per_frame)).tolist()
    psnr_steps = [psnr_from_mse(v) for v in mse_steps]
    mse_mean = float(np.mean(mse_steps)) if horizon else 0.0
    report = MetricReport(
        context=context, horizon=horizon, sequences=count,
        ssim=ssim_steps, mse=mse_steps, psnr=psnr_steps,
        ssim_mean=float(np.mean(ssim_steps)) if horizon else 0.0,
        mse_mean=mse_mean,
        psnr_mean=psnr_from_mse(mse_mean),
        psnr_infinite=any(math.isinf(v) for v in psnr_steps),
        external={k: (v / count).tolist() for k, v in ext_sum.items()},
        fingerprint=fingerprint,
    )
    if report_path is not None:
        report.write(report_path)
    return report
