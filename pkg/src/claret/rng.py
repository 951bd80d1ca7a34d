"""Deterministic random streams used for init, dropout, shuffling and synth data.

The generator is xoshiro256** (Blackman/Vigna) seeded from SplitMix64, so the
full algorithm lives in this file and every stream is reproducible from a
64-bit seed alone, independent of numpy's own RNG machinery.

Layout: a stream runs ``LANES`` independent xoshiro256** instances side by
side; lane ``j`` is seeded with SplitMix64 outputs ``4j .. 4j+3``. One step
advances every lane and emits one 64-bit word per lane, in lane order, so the
word sequence for a given seed is fixed. ``LANES`` is part of the algorithm
and must never change, or every stream changes.

Derived values:
  - uniform double in [0, 1): ``(word >> 11) * 2**-53``
  - normals: Box-Muller; pair ``i`` consumes words ``2i`` (radius, shifted
    into (0, 1]) and ``2i+1`` (angle), emitting cos then sin.
  - permutations: stable argsort of one word per element.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

LANES = 1024


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a plain Python integer."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, label: str) -> int:
    """Child seed for an independent stream, from a parent seed and a label.

    FNV-1a folds the label bytes; mix64 decorrelates the result from the
    parent. Deterministic across platforms and processes.
    """
    h = _FNV_OFFSET
    for b in label.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return mix64((seed & _MASK64) ^ h)


def splitmix64_array(seed: int, n: int) -> np.ndarray:
    """First ``n`` SplitMix64 outputs for ``seed`` as a uint64 array.

    SplitMix64's state after i steps is ``seed + i*GOLDEN`` mod 2**64, so the
    whole sequence is a pure function of the counter and vectorizes.
    """
    counter = (seed & _MASK64) + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
    x = counter.astype(np.uint64)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class RandomStream:
    """Buffered stream of 64-bit words from lane-parallel xoshiro256**."""

    def __init__(self, seed: int):
        words = splitmix64_array(seed, 4 * LANES)
        s = [words[i::4].copy() for i in range(4)]
        # an all-zero xoshiro state would be a fixed point; nudge it
        dead = (s[0] | s[1] | s[2] | s[3]) == 0
        if dead.any():
            s[0] = s[0] | dead.astype(np.uint64)
        self._s = s
        self._buffer: list[np.ndarray] = []
        self._buffered = 0

    def _next_block(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` 64-bit words of the stream."""
        while self._buffered < n:
            block = self._next_block()
            self._buffer.append(block)
            self._buffered += block.size
        flat = self._buffer[0] if len(self._buffer) == 1 else np.concatenate(self._buffer)
        out, rest = flat[:n], flat[n:]
        self._buffer = [rest] if rest.size else []
        self._buffered = rest.size
        return out

    def uniform(self, shape=(), lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Uniform doubles in [lo, hi)."""
        n = int(np.prod(shape)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (u * (hi - lo) + lo).reshape(shape)

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        """Standard-normal doubles scaled by ``std`` (Box-Muller)."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        w = self.raw(2 * pairs)
        u1 = ((w[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (w[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return (z[:n] * std).reshape(shape)

    def keep_mask(self, shape, rate: float) -> np.ndarray:
        """Boolean mask, False with probability ``rate`` per element."""
        return self.uniform(shape) >= rate

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of range(n) from an argsort of n stream words."""
        return np.argsort(self.raw(n), kind="stable")
