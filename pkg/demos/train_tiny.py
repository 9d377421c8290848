"""
A tiny end-to-end run
=====================

Trains a two-level network for a few batches on 16x16 clips, evaluates it
and reloads the checkpoint. Real runs use the ``mspn`` command instead.
"""

import tempfile

from mspn.checkpoint import load_checkpoint
from mspn.config import from_dict
from mspn.trainer import train

config = from_dict({
    "data": {"canvas": 16, "digits": 1, "glyph_size": 8, "train_count": 16, "test_count": 4},
    "network": {"levels": 2, "hidden_channels": 4, "code_channels": 2},
    "context": 5, "horizon": 5, "batch_size": 2, "epochs": 3,
    "adversarial": True, "lr_d": 1e-3, "disc_base_channels": 4,
})

out = tempfile.mkdtemp()
result = train(config, out)
switches = [r for r in result.history if r["type"] == "switch"]
for rec in switches:
    print(f"switch out of {rec['phase']} after {rec['iters']} iterations ({rec['reason']})")
if not switches:
    print("still in the first", result.alternation.phase, "phase after", result.step, "updates")
final = [r for r in result.history if r["type"] == "eval"][-1]
print(f"final SSIM {final['ssim']:.3f}, MSE {final['mse']:.4f}")

ckpt = load_checkpoint(f"{out}/checkpoints/final.pt")
print("checkpoint step", ckpt.step, "fingerprint", ckpt.fingerprint)
