import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(root: int, *names) -> int:
    """Named sub-seed of ``root``; stable across runs and platforms."""
    seq = np.random.SeedSequence([int(root) & 0xFFFFFFFF, *(_key(n) for n in names)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def rng_for(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
