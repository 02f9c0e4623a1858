"""Deterministic, portable random streams.

Every random draw in the toolkit flows through Philox, a counter-based
bit generator with a platform-independent stream, so a given seed
reproduces the same outputs on any machine. Independent substreams are
derived from a root seed plus integer stream labels.
"""

import numpy as np

# Stream labels for well-known substreams. Keeping them in one place
# avoids accidental collisions between modules.
STREAM_NOISE = 1
STREAM_SAMPLER = 2
STREAM_STACK = 3
STREAM_SWEEP = 4
STREAM_INIT = 5
STREAM_TRAIN = 6
STREAM_VAL = 7
STREAM_EVAL = 8
STREAM_TEXTURE = 9
STREAM_KERNEL = 10


def make_rng(seed, *stream):
    """Return a Philox-backed Generator for (seed, stream...).

    `stream` is a tuple of non-negative ints naming a substream; the same
    (seed, stream) always yields the same sequence.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))
