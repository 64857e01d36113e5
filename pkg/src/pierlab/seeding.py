"""Deterministic RNG substreams.

Every random draw in the package flows from a single master seed through
named substreams, so independent pipeline stages stay reproducible and
uncorrelated regardless of execution order.
"""

import zlib

import numpy as np


def substream(master_seed: int, *names) -> np.random.Generator:
    """Return a Generator for the substream identified by ``names``.

    The same (master_seed, names) tuple always yields the same stream.
    Names may be strings or integers; strings are hashed with CRC32 so the
    derivation does not depend on Python's randomized ``hash``.
    """
    keys = []
    for name in names:
        if isinstance(name, (int, np.integer)):
            keys.append(int(name) & 0xFFFFFFFF)
        else:
            keys.append(zlib.crc32(str(name).encode("utf-8")))
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *keys])
    return np.random.default_rng(seq)
