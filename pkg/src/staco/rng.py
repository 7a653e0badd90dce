"""Seeded Philox streams, one independent stream per named purpose."""
import zlib

import numpy as np


def make_rng(seed: int, stream: str) -> np.random.Generator:
    # crc32 keeps the stream key stable across processes (hash() is salted)
    ss = np.random.SeedSequence([int(seed), zlib.crc32(stream.encode())])
    return np.random.Generator(np.random.Philox(ss))
