"""Namespaced random streams derived from a single seed.

Every stochastic stage (split, init, shuffle, dropout, synth, forest)
draws from its own stream so that changing one stage never perturbs
another.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def derive_rng(seed: int, namespace: str, *keys) -> np.random.Generator:
    """Return a Generator for ``(seed, namespace, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_key(namespace), *(_key(k) for k in keys)))
    return np.random.Generator(np.random.PCG64(ss))
