"""Procedural sharp images.

No real photographic corpus ships with the toolkit, so demos, tests and
toy training synthesize sharp content: smoothed noise plus random
rectangles gives broad spectral coverage and plenty of oriented edges,
which is what kernel estimation and deblurring feed on.
"""

import numpy as np
from scipy import ndimage

from .rng import STREAM_TEXTURE, make_rng


def sharp_texture(seed, height=128, width=128, channels=1, rects=30, index=0):
    """One procedural sharp image in [0, 1].

    `index` selects an independent substream so pools of distinct images
    can share one seed.
    """
    rng = make_rng(seed, STREAM_TEXTURE, index)
    img = np.empty((height, width, channels))
    for c in range(channels):
        img[:, :, c] = ndimage.gaussian_filter(rng.random((height, width)), 1.0)
    for _ in range(rects):
        h0 = int(rng.integers(0, max(height - 8, 1)))
        w0 = int(rng.integers(0, max(width - 8, 1)))
        h1 = min(h0 + int(rng.integers(4, max(height // 2, 5))), height)
        w1 = min(w0 + int(rng.integers(4, max(width // 2, 5))), width)
        img[h0:h1, w0:w1] += rng.uniform(-0.5, 0.5, size=channels)
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return img


def texture_pool(seed, count, height=128, width=128, channels=1):
    """A list of `count` distinct procedural sharp images."""
    return [sharp_texture(seed, height, width, channels, index=i) for i in range(count)]
