"""Counter-based random streams.

The generator is Philox4x64-10 (Salmon et al., Random123) as shipped by
numpy.  A stream is identified by a 128-bit key; block ``i`` of a stream is
the Philox output for counter value ``i`` and holds four 64-bit words.
Keys are derived from a 64-bit seed and a path of integer tags with the
SplitMix64 finaliser, so sub-streams never share sequence positions.

Uniforms use the top 52 bits of a word, centred on the grid:
``u = ((w >> 12) + 0.5) * 2**-52``, which lies strictly inside (0, 1).
(With 53 bits the top grid point rounds to exactly 1.0.)
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_COUNTER_WRAP = (1 << 256) - 1

# stream tags
COHORT = 1
REPLICATE = 2
BOOTSTRAP = 3


def splitmix64(x):
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *path):
    """64-bit seed for the sub-stream ``path`` below ``seed``."""
    h = splitmix64(int(seed) & MASK64)
    for tag in path:
        h = splitmix64(h ^ splitmix64(int(tag) & MASK64))
    return h


class Stream:
    """A keyed Philox stream addressed by block counter."""

    def __init__(self, key):
        self.key = int(key) & ((1 << 128) - 1)

    @classmethod
    def from_seed(cls, seed, *path):
        h = derive_seed(seed, *path)
        return cls(splitmix64(h ^ 0x5EED) | splitmix64(h ^ 0xC0DE) << 64)

    def split(self, *path):
        lo, hi = self.key & MASK64, self.key >> 64
        return Stream.from_seed(lo ^ splitmix64(hi), *path)

    def blocks(self, start, count):
        """Words of blocks ``start .. start + count - 1`` as a ``(count, 4)`` array."""
        # numpy increments the counter before producing a block
        bitgen = np.random.Philox(counter=(start - 1) & _COUNTER_WRAP, key=self.key)
        return bitgen.random_raw(4 * count).reshape(count, 4)

    def generator(self):
        """A numpy Generator over this stream, for draws that need no cross-language identity."""
        return np.random.Generator(np.random.Philox(key=self.key))


def to_uniform(words):
    return ((np.asarray(words, dtype=np.uint64) >> np.uint64(12)).astype(float) + 0.5) * 2.0**-52
