"""Deterministic derivation of independent RNG streams from a master seed."""

import zlib

import numpy as np


def derive_seed(*parts) -> int:
    """Hash a tuple of ints/strings into a 64-bit seed.

    The same parts always give the same seed, on every platform, so any
    component of an experiment (split, bags, basis, episode, per-step
    committee draws) can rebuild its RNG stream independently of execution
    order.
    """
    words = []
    for p in parts:
        if isinstance(p, str):
            words.append(zlib.crc32(p.encode("utf-8")))
        elif isinstance(p, (int, np.integer)):
            words.append(int(p) & 0xFFFFFFFF)
            words.append((int(p) >> 32) & 0xFFFFFFFF)
        else:
            raise TypeError(f"seed parts must be int or str, got {type(p).__name__}")
    state = np.random.SeedSequence(words).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])
