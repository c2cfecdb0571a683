"""Seedable deterministic random numbers.

The generator is xoshiro256** with its four state words expanded from
the user seed by splitmix64, the customary seeding recipe. All draws are
derived from the raw 64-bit stream, so a given seed produces the same
sequence on every platform and under either kernel backend. Derived
seeds for independent streams (per-sample, per-epoch, per-trial) come
from :func:`derive_seed`, which hashes the parent seed with each key.
"""

import numpy as np

from . import kernels

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 2.0 ** -53


def splitmix64(z: int) -> int:
    """One splitmix64 output for state ``z`` (already advanced by the caller)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Hash ``seed`` with integer keys into an independent 64-bit seed.

    Used wherever the artifact needs a family of decorrelated streams
    (sample index within a split, epoch number, trial number). Plain
    xor of the keys would collide across (split, index) pairs, so each
    key is folded through splitmix64 instead.
    """
    h = seed & _MASK
    for key in keys:
        h = splitmix64((h + _GOLDEN) ^ ((key & _MASK) * 0xD1342543DE82EF95 & _MASK))
    return h


class Rng:
    """xoshiro256** stream with vectorized draw helpers.

    Draws are served from an internal block buffer; buffering only
    prefetches, so the consumed sequence is a pure function of the seed
    and the draw sizes requested.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        z = self.seed
        words = []
        for _ in range(4):
            z = (z + _GOLDEN) & _MASK
            words.append(splitmix64(z))
        self._state = np.array(words, dtype=np.uint64)
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0

    def spawn(self, *keys: int) -> "Rng":
        """Child generator with a seed derived from this one's seed."""
        return Rng(derive_seed(self.seed, *keys))

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 values."""
        out = np.empty(n, dtype=np.uint64)
        avail = self._buf.shape[0] - self._pos
        take = min(avail, n)
        if take:
            out[:take] = self._buf[self._pos : self._pos + take]
            self._pos += take
        missing = n - take
        if missing:
            block = max(missing, 8192)
            self._buf = np.empty(block, dtype=np.uint64)
            kernels.xoshiro_fill(self._state, self._buf)
            out[take:] = self._buf[:missing]
            self._pos = missing
        return out

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        """Uniform float64 draws in [low, high)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        if low != 0.0 or high != 1.0:
            u = low + (high - low) * u
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def integer(self, n: int) -> int:
        """One integer uniform on {0, ..., n-1}."""
        return int(self.uniform() * n)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n) by sorting uniform keys."""
        return np.argsort(self.uniform(n), kind="stable")

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        """Gaussian draws via Box-Muller; odd counts discard the spare."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(2, pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = mean + std * z[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def poisson(self, lam: np.ndarray) -> np.ndarray:
        """Per-element Poisson counts (Knuth's product method; small rates)."""
        lam = np.asarray(lam, dtype=np.float64)
        flat = lam.ravel()
        out = np.zeros(flat.shape[0], dtype=np.int64)
        for i in range(flat.shape[0]):
            if flat[i] <= 0.0:
                continue
            limit = np.exp(-flat[i])
            k = 0
            prod = 1.0
            while True:
                prod *= self.uniform()
                if prod <= limit:
                    break
                k += 1
            out[i] = k
        return out.reshape(lam.shape)
