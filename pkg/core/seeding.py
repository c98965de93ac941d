import zlib
from typing import Union

import numpy as np

SEED_MASK = (1 << 63) - 1


def _key(part: Union[int, str]) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"seed path parts must be non-negative, got {part}")
    return int(part)


def derive_seed(root: int, *path: Union[int, str]) -> int:
    """Split a root seed into a component seed.

    Counter scheme: the path (strings hashed with crc32, ints as-is) becomes
    the numpy SeedSequence spawn key under the root entropy, so
    derive_seed(s, "run", 3) is stable across versions and platforms.
    """
    seq = np.random.SeedSequence(entropy=int(root) & SEED_MASK,
                                 spawn_key=tuple(_key(p) for p in path))
    return int(seq.generate_state(1, dtype=np.uint64)[0]) & SEED_MASK


def make_rng(root: int, *path: Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *path))
