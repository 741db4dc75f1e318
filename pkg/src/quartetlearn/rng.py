"""Deterministic random-stream management.

Every source of randomness in the package is derived from one integer root
seed through *named substreams*.  A substream is identified by the root seed
plus a chain of human-readable parts (strings or ints), so the exact
generator used by any module at any repetition can be re-derived and logged.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _spawn_key(parts: tuple) -> tuple[int, ...]:
    """Hash the name chain to four uint32 words (platform independent)."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[4 * i : 4 * i + 4], "little") for i in range(4))


def substream(root_seed: int, *parts) -> np.random.Generator:
    """Return the generator for the substream named by ``parts``.

    Same (root_seed, parts) always yields an identical stream; distinct
    name chains yield statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=_spawn_key(parts))
    return np.random.Generator(np.random.PCG64(seq))


def as_generator(seed_or_rng) -> np.random.Generator:
    """Accept either an int seed or an existing Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.Generator(np.random.PCG64(int(seed_or_rng)))
