"""Counter-based splittable random streams.

Every stream is a Philox generator keyed by ``(seed, path)`` through
``numpy.random.SeedSequence``'s spawn key, so ``split`` is reproducible and
independent of how many numbers the parent has already drawn.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(part):
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream keys must be non-negative")
        return int(part)
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Reproducible random stream addressed by a seed and a split path."""

    def __init__(self, seed, path=()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def split(self, *keys):
        """Child stream for ``keys`` (ints or strings)."""
        return RngStream(self.seed, self.path + tuple(_key(k) for k in keys))

    def spawn(self, n):
        return [self.split(i) for i in range(n)]

    def __getattr__(self, name):
        # normal, uniform, integers, permutation, ... come from the Generator
        if name.startswith("__") or "gen" not in self.__dict__:
            raise AttributeError(name)
        return getattr(self.gen, name)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"
