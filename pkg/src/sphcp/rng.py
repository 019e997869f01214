"""Counter-based random streams.

Every random draw in a chain comes from a Philox stream keyed by
``(seed, iteration, tag, *index)``. Two chains that share a seed therefore see
the same uniforms for the same variable at the same iteration, whatever their
truncation degree or number of worker threads. This is what couples chains
across truncation levels.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("ascii"))


class Streams:
    """Factory of independent, reproducible generators."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, iteration: int, tag: str, *index: int) -> np.random.Generator:
        key = [self.seed, int(iteration), _tag_code(tag), *(int(i) for i in index)]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

    def uniform(self, iteration: int, tag: str, size, *index: int) -> np.ndarray:
        return self.generator(iteration, tag, *index).random(size)

    def normal(self, iteration: int, tag: str, size, *index: int) -> np.ndarray:
        return self.generator(iteration, tag, *index).standard_normal(size)

    def spawn(self, *index: int) -> "Streams":
        """Child streams, e.g. one per simulation replicate."""
        ss = np.random.SeedSequence([self.seed, *index])
        return Streams(int(ss.generate_state(1, dtype=np.uint64)[0] >> 1))
