"""Regenerate src/mspn/assets/glyphs.npz from scikit-learn's bundled digit scans.

Ten samples per class are upscaled from 8x8 to 28x28 and stored as uint8.
Run once; scikit-learn is not a runtime dependency.
"""
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.datasets import load_digits

OUT = Path(__file__).resolve().parents[1] / "src" / "mspn" / "assets" / "glyphs.npz"

digits = load_digits()
glyphs, labels = [], []
for cls in range(10):
    idx = np.flatnonzero(digits.target == cls)[:10]
    for i in idx:
        img = (digits.images[i] / 16.0 * 255).astype(np.uint8)
        big = Image.fromarray(img).resize((24, 24), Image.BICUBIC)
        canvas = np.zeros((28, 28), np.uint8)
        canvas[2:26, 2:26] = np.asarray(big)
        glyphs.append(canvas)
        labels.append(cls)
np.savez_compressed(OUT, glyphs=np.stack(glyphs), labels=np.array(labels, np.uint8))
print(f"wrote {len(glyphs)} glyphs to {OUT}")
