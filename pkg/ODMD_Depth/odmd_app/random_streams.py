"""Counter-based random streams (Philox4x32-10) vectorized over many streams.

A stream is addressed by (seed, index, domain). The 64-bit seed is the
Philox key; the 128-bit counter is (block, index_lo, index_hi, domain).
Every draw call starts at a fresh block, so how many values a stream has
consumed depends only on the sequence of calls, never on earlier values.

Doubles take 53 bits from two 32-bit words; normals use Box-Muller.
"""

from typing import Sequence, Union

import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint64(0x9E3779B9)
PHILOX_W1 = np.uint64(0xBB67AE85)
PHILOX_ROUNDS = 10
MASK32 = np.uint64(0xFFFFFFFF)

DOMAIN_EXAMPLES = 0
DOMAIN_INIT = 1
DOMAIN_ENSEMBLE = 2
DOMAIN_ORDER = 3


def philox4x32(counter: Sequence[np.ndarray], key: Sequence[np.ndarray]):
    """Philox4x32-10 block function on broadcastable uint64 arrays holding 32-bit words.

    Returns the four output words as uint64 arrays.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in counter))
    k0, k1 = (np.asarray(k, dtype=np.uint64) for k in key)
    for _ in range(PHILOX_ROUNDS):
        prod0 = c0 * PHILOX_M0
        prod1 = c2 * PHILOX_M1
        hi0, lo0 = prod0 >> np.uint64(32), prod0 & MASK32
        hi1, lo1 = prod1 >> np.uint64(32), prod1 & MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + PHILOX_W0) & MASK32
        k1 = (k1 + PHILOX_W1) & MASK32
    return c0, c1, c2, c3


def _words_to_unit(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    bits = (a >> np.uint64(5)) * np.uint64(1 << 26) + (b >> np.uint64(6))
    return bits.astype(np.float64) * (1.0 / 9007199254740992.0)


class CounterStream:
    """A batch of independent streams sharing one seed and domain.

    Parameters:
    - seed: unsigned 64-bit seed
    - indices: stream index per row (unsigned 64-bit)
    - domain: stream family tag keeping different consumers apart
    """

    def __init__(self, seed: int, indices: Union[int, Sequence[int], np.ndarray], domain: int = DOMAIN_EXAMPLES):
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        idx = np.atleast_1d(np.asarray(indices, dtype=np.uint64))
        self.indices = idx
        self.size = idx.shape[0]
        self._key = (np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32))
        self._idx_lo = (idx & MASK32)[:, None]
        self._idx_hi = (idx >> np.uint64(32))[:, None]
        self._domain = np.uint64(domain)
        self.block = 0

    def _blocks(self, count: int):
        blocks = np.arange(self.block, self.block + count, dtype=np.uint64)[None, :]
        self.block += count
        return philox4x32((blocks, self._idx_lo, self._idx_hi, self._domain), self._key)

    def uniform(self, count: int, low=0.0, high=1.0) -> np.ndarray:
        """(size, count) doubles in [low, high)"""
        w0, w1, w2, w3 = self._blocks((count + 1) // 2)
        u = np.empty((self.size, 2 * ((count + 1) // 2)), dtype=np.float64)
        u[:, 0::2] = _words_to_unit(w0, w1)
        u[:, 1::2] = _words_to_unit(w2, w3)
        u = u[:, :count]
        low = np.asarray(low, dtype=np.float64)
        high = np.asarray(high, dtype=np.float64)
        return low + (high - low) * u

    def normal(self, count: int, sigma=1.0) -> np.ndarray:
        """(size, count) draws from N(0, sigma^2)"""
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0::2]))
        angle = 2.0 * np.pi * u[:, 1::2]
        z = np.empty((self.size, 2 * pairs), dtype=np.float64)
        z[:, 0::2] = radius * np.cos(angle)
        z[:, 1::2] = radius * np.sin(angle)
        return sigma * z[:, :count]

    def rademacher(self, count: int) -> np.ndarray:
        return np.where(self.uniform(count) < 0.5, -1.0, 1.0)

    def bernoulli(self, count: int, p: float) -> np.ndarray:
        return self.uniform(count) < p

    def integers(self, count: int, high: int) -> np.ndarray:
        """(size, count) integers uniform in [0, high)"""
        return np.minimum((self.uniform(count) * high).astype(np.int64), high - 1)
