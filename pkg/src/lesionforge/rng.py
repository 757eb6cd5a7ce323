"""Seed derivation for every randomized behavior in the engine.

All randomness flows through NumPy's PCG64 generator, seeded with a
``SeedSequence(entropy=seed, spawn_key=(stream, ...))``. Deriving a fresh
generator per (stream, coordinates) makes results independent of worker
scheduling: the augmentation applied to sample i of epoch e depends only on
(seed, epoch, i), never on which thread processed it.
"""

import numpy as np

# Stream tags. Order is frozen: changing these renumbers every derived stream.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_AUGMENT = 2
STREAM_DROPOUT = 3
STREAM_SYNTH = 4
STREAM_SPLIT = 5


def derived_rng(seed, *path):
    """Return a PCG64 generator for the stream addressed by ``path``."""
    key = tuple(int(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))
