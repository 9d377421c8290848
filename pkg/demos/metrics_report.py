"""
SSIM, PSNR and a copy-last-frame baseline
=========================================
"""

import tempfile
from pathlib import Path

import torch
from mspn.data import generate_moving_digits
from mspn.metrics import MetricReport, copy_last_frame, evaluate, psnr, ssim

x = torch.rand(3, 32, 32, dtype=torch.float64)
print("ssim(x, x) =", ssim(x, x))
print("psnr with a uniform 0.1 residual =", psnr(x.clamp(0, 0.9), x.clamp(0, 0.9) + 0.1))

data = generate_moving_digits(20, digits_per_frame=1, canvas=32, seq_len=20, seed=1)
report = evaluate(copy_last_frame, data, context=10, horizon=10)
print("copy-last SSIM per step:", [round(v, 3) for v in report.ssim])
print(f"mean SSIM {report.ssim_mean:.3f}, mean MSE {report.mse_mean:.4f}")

out = Path(tempfile.mkdtemp()) / "report.jsonl"
report.write(out)
print(out.read_text().splitlines()[-1][:120], "...")
assert MetricReport.read(out).ssim == report.ssim
