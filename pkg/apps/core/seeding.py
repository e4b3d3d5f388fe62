"""
Seed derivation helpers

Every random stream in the project is a numpy Generator derived from the
run's global seed plus a tuple of tags, so no module touches global RNG
state and any stage can be rerun in isolation.
"""

import zlib

import numpy as np


def _tag_to_int(tag):
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_seed(seed, *tags):
    """
    Mix a base seed with tags into a SeedSequence

    Args:
        seed (int): Base 64-bit seed
        *tags: ints or strings naming the consumer (e.g. "scene", 17)

    Returns:
        numpy.random.SeedSequence: Deterministic seed sequence
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.SeedSequence(entropy)


def derive_rng(seed, *tags):
    """Return a numpy Generator for (seed, *tags)"""
    return np.random.default_rng(derive_seed(seed, *tags))
