"""Localize a marker by exemplar voting.

Twenty training images each contain a bright plus sign on smooth noise.
A star model learns the plus-sign center from patches around it; on a new
image every dense descriptor finds its nearest exemplar and votes for the
center through that exemplar's offset. The vote map is written as a PNG.

Run: python demos/star_voting.py [out_dir]
"""

import os
import sys

import numpy as np
from scipy.ndimage import gaussian_filter

from faceaction import overlay, star_vote


def plus_sign(rng, size, center):
    img = 0.3 + 0.3 * gaussian_filter(rng.random((size, size)), 2.0)
    cx, cy = center
    img[cy - 1:cy + 2, cx - 10:cx + 11] = 0.9
    img[cy - 10:cy + 11, cx - 1:cx + 2] = 0.9
    return np.clip(img, 0, 1)


def main(out_dir="demo_out"):
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(0)
    samples = []
    for _ in range(20):
        c = tuple(int(v) for v in rng.integers(24, 56, 2))
        samples.append((plus_sign(rng, 80, c), c))
    model = star_vote.train_star(samples)
    print(f"trained on {len(samples)} images: {len(model)} exemplars")

    for trial in range(5):
        c = tuple(int(v) for v in rng.integers(20, 60, 2))
        heat = star_vote.vote(model, plus_sign(rng, 80, c))
        x, y = heat.argmax()
        print(f"trial {trial}: true center {c}, vote peak {(x, y)}, peak mass {heat.mass[y, x]:.4f}")
    path = os.path.join(out_dir, "star_votes.png")
    overlay.emit_heatmap(heat, path)
    print(f"last vote map written to {path}")


if __name__ == "__main__":
    main(*sys.argv[1:])
