"""Seeded pseudo-randomness with named, independent substreams.

Streams are backed by numpy's PCG64 generator; a 64-bit seed plus a stable
hash of the substream name fully determine every draw, so identical seeds
reproduce identical experiments across platforms. Typical substream names:
``weights-init``, ``sampling``, ``shuffle``, ``dropout``.
"""

import zlib

import numpy as np

from .errors import DomainError

# open-interval guard for draws that must stay strictly inside (-1/2, 1/2)
_HALF_OPEN = np.nextafter(0.5, 0.0)


def _name_key(name):
    return zlib.crc32(name.encode("utf-8"))


class Rng:
    """A single pseudo-random stream. Not shareable across workers."""

    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._spawn_key))
        )

    def substream(self, name):
        """An independent stream derived from this seed and ``name``."""
        return Rng(self.seed, self._spawn_key + (_name_key(name),))

    def open_unit(self, shape=None, dtype=np.float64):
        """Uniform draws strictly inside (-1/2, 1/2)."""
        u = self._gen.random(size=shape) - 0.5
        return np.clip(u, -_HALF_OPEN, _HALF_OPEN).astype(dtype, copy=False)

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None, scale=1.0):
        return self._gen.normal(0.0, scale, size=shape)

    def random(self, shape=None):
        return self._gen.random(size=shape)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def keep_mask(self, shape, p_drop):
        """Boolean mask that is True where an element survives dropout."""
        if not 0.0 <= p_drop < 1.0:
            raise DomainError(f"drop probability must lie in [0, 1), got {p_drop}")
        return self._gen.random(size=shape) >= p_drop

    def state(self):
        return {
            "seed": self.seed,
            "spawn_key": list(self._spawn_key),
            "pcg64": self._gen.bit_generator.state["state"],
        }

    def restore(self, state):
        if state["seed"] != self.seed or tuple(state["spawn_key"]) != self._spawn_key:
            raise DomainError("rng state does not belong to this stream")
        full = self._gen.bit_generator.state
        full["state"] = {k: int(v) for k, v in state["pcg64"].items()}
        self._gen.bit_generator.state = full
