"""Reproducible random streams keyed by (seed, index, ...).

Every stream is an independent Philox generator whose key comes from a
``SeedSequence`` with the integer path as its spawn key, so draws never
depend on which worker or in which order a stream is consumed.
"""

import numpy as np

# purpose tags keep streams for different uses apart under the same seed
SIMULATION = 1
DGP_DONORS = 2
DGP_ERRORS = 3


def stream(seed: int, *path: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(seq))
