import numpy as np


def derive_seed(*parts: int) -> int:
    """Mix integer parts into one reproducible 64-bit seed.

    Stable across runs and platforms (SeedSequence hashing only).
    """
    seq = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(seq.generate_state(1, np.uint64)[0])
