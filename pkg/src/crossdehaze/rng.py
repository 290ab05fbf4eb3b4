"""Seeded, splittable random streams.

Each stream is a numpy ``Philox`` counter-based generator whose 128-bit key
is the BLAKE2b digest of ``"<seed>/<label>/<label>..."``. Child streams are
therefore a pure function of the root seed and the label path, independent
of how many numbers any sibling stream has drawn.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _derive_key(seed, path):
    text = "/".join([str(seed)] + list(path)).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=16).digest(), "little")


class Rng:
    def __init__(self, seed, path=()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(path)
        self.splits = 0
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(self.seed, self.path)))

    def split(self, label):
        """Return an independent child stream named ``label``."""
        self.splits += 1
        return Rng(self.seed, self.path + (str(label),))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        """Integers in ``[low, high)`` (numpy convention)."""
        return self._gen.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"
