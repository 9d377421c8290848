"""
Teacher forcing versus predicted feedback
=========================================

Both rollouts see the same ground-truth context. They only diverge once the
network starts consuming its own predictions.
"""

import torch
from mspn import MSPN, NetworkConfig, PREDICTED_FEEDBACK, TEACHER_FORCED
from mspn.data import generate_moving_digits

torch.manual_seed(0)
clips = generate_moving_digits(2, digits_per_frame=1, canvas=32, seq_len=10, seed=3)
frames = torch.stack([clips[i] for i in range(len(clips))])

net = MSPN(NetworkConfig(levels=3, hidden_channels=8, code_channels=4))
with torch.no_grad():
    tf = net.rollout(frames, context=5, horizon=5, mode=TEACHER_FORCED)
    pf = net.rollout(frames, context=5, horizon=5, mode=PREDICTED_FEEDBACK)

for t, (a, b) in enumerate(zip(tf.level_predictions, pf.level_predictions)):
    gap = (a[0] - b[0]).abs().max().item()
    print(f"step {t}: max difference {gap:.3e}")

print("steps fed from predictions:", pf.fed_back)
