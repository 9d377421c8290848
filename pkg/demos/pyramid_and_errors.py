"""
Frame pyramids and signed prediction errors
===========================================

Every level of the network works on a 2x2 average-pooled copy of the frame
below it, and compares its prediction against that copy through a pair of
rectified difference maps.
"""

import torch
from mspn.pyramid import build_pyramid, compute_error

# a 3-channel 32x32 frame with a bright square in one corner
frame = torch.zeros(3, 32, 32)
frame[:, 4:12, 4:12] = 1.0

levels = build_pyramid(frame, 3)
for l, img in enumerate(levels):
    print(f"level {l}: shape {tuple(img.shape)}, mean {img.mean():.4f}")

# averaging preserves the mean, so every level reports the same value

# a prediction that is off by one pixel to the right
prediction = torch.roll(frame, shifts=1, dims=-1)
error = compute_error(frame, prediction)
print("error channels:", error.shape[0])
print("missed pixels   :", int((error[:3] > 0).sum()))
print("spurious pixels :", int((error[3:] > 0).sum()))

# the two halves add up to the absolute difference
assert torch.equal(error[:3] + error[3:], (frame - prediction).abs())
