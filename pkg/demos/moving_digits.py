"""
Synthetic moving digits
=======================

Bouncing glyphs on a black canvas, stored as uint8 clips. Splits are
derived from one seed and checked for overlap.
"""

import numpy as np
from PIL import Image
from mspn.data import make_splits

train, test = make_splits(50, 10, seed=0, digits_per_frame=2, canvas=64, seq_len=20)
print("train", train.frames.shape, train.frames.dtype, " test", test.frames.shape)
print("manifest keys:", sorted(train.manifest()))

clip = train.frames[0, :, 0]                      # first sequence, one channel
strip = np.concatenate(list(clip[::4]), axis=1)   # every 4th frame side by side
Image.fromarray(strip).save("moving_digits_strip.png")
print("wrote moving_digits_strip.png", strip.shape)
