"""Counter-based random numbers (Threefry-2x32, 20 rounds) in numpy.

Every draw is a pure function of (key, counter), so a path's stream depends
only on the seed and its path index, never on scheduling or batch layout.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_ROTATIONS = (13, 15, 26, 6, 17, 29, 16, 24)
_PARITY = np.uint32(0x1BD11BDA)
_MASK32 = (1 << 32) - 1


def _rotl(x: np.ndarray, r: int) -> np.ndarray:
    return (x << np.uint32(r)) | (x >> np.uint32(32 - r))


def threefry2x32(key: tuple[int, int], c0, c1) -> tuple[np.ndarray, np.ndarray]:
    """Threefry-2x32-20 block function; counters broadcast elementwise."""
    k0 = np.uint32(key[0] & _MASK32)
    k1 = np.uint32(key[1] & _MASK32)
    ks = (k0, k1, k0 ^ k1 ^ _PARITY)
    x0 = np.asarray(c0, dtype=np.uint32) + ks[0]
    x1 = np.asarray(c1, dtype=np.uint32) + ks[1]
    x0, x1 = np.broadcast_arrays(x0, x1)
    shape = x0.shape
    # 1-d working copies keep uint32 wraparound silent (0-d adds warn)
    x0 = x0.reshape(-1).copy()
    x1 = x1.reshape(-1).copy()
    for block in range(5):
        rots = _ROTATIONS[:4] if block % 2 == 0 else _ROTATIONS[4:]
        for r in rots:
            x0 += x1
            x1 = _rotl(x1, r)
            x1 ^= x0
        s = block + 1
        x0 += ks[s % 3]
        x1 += ks[(s + 1) % 3]
        x1 += np.uint32(s)
    return x0.reshape(shape), x1.reshape(shape)


def seed_key(seed: int) -> tuple[int, int]:
    """Split a non-negative integer seed into two 32-bit key words."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return seed & _MASK32, (seed >> 32) & _MASK32


def uniforms(key: tuple[int, int], stream, counter) -> np.ndarray:
    """Open-interval uniforms in (0, 1) with 53 random bits each.

    ``stream`` and ``counter`` are the two counter words; ``counter`` must
    stay below 2**32 per stream.
    """
    counter = np.asarray(counter, dtype=np.uint64)
    if counter.size and int(counter.max()) > _MASK32:
        raise OverflowError("per-stream draw counter exhausted")
    hi, lo = threefry2x32(key, np.asarray(stream, dtype=np.uint64).astype(np.uint32),
                         counter.astype(np.uint32))
    bits = (hi.astype(np.uint64) << np.uint64(32)) | lo.astype(np.uint64)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def normals(key: tuple[int, int], stream, counter) -> np.ndarray:
    """Standard normals by inverse CDF of :func:`uniforms`."""
    return ndtri(uniforms(key, stream, counter))


class PathStreams:
    """Per-path draw counters for a block of paths sharing one key.

    Each path consumes its own sequence of counters, so a path's draws are
    identical whichever block or worker simulates it.  Uniforms are produced
    ``buffer`` counters at a time per path; buffering changes cost only,
    never values.
    """

    def __init__(self, seed: int, path_indices: np.ndarray, buffer: int = 64):
        self.key = seed_key(int(seed))
        self.paths = np.asarray(path_indices, dtype=np.uint64)
        if self.paths.size and int(self.paths.max()) > _MASK32:
            raise OverflowError("path index exceeds 32 bits")
        self.width = max(1, int(buffer))
        self.used = np.zeros(len(self.paths), dtype=np.int64)
        # buffer row i holds the uniforms for counters base[i] .. base[i]+width-1
        self.base = np.zeros(len(self.paths), dtype=np.int64)
        self.buf = np.empty((len(self.paths), self.width))
        self._fill(np.arange(len(self.paths)))

    def _direct(self, rows: np.ndarray, k: int) -> np.ndarray:
        counter = self.used[rows][:, None] + np.arange(k, dtype=np.int64)[None, :]
        stream = np.broadcast_to(self.paths[rows][:, None], counter.shape)
        return uniforms(self.key, stream, counter.astype(np.uint64))

    def _fill(self, rows: np.ndarray):
        self.buf[rows] = self._direct(rows, self.width)
        self.base[rows] = self.used[rows]

    def uniform(self, rows: np.ndarray, k: int = 1) -> np.ndarray:
        """(len(rows), k) uniforms for the selected rows."""
        rows = np.asarray(rows, dtype=np.int64)
        if k > self.width:
            out = self._direct(rows, k)
        else:
            stale = self.used[rows] + k > self.base[rows] + self.width
            if np.any(stale):
                self._fill(rows[stale])
            offset = (self.used[rows] - self.base[rows])[:, None] + np.arange(k)[None, :]
            out = self.buf[rows[:, None], offset]
        self.used[rows] += k
        return out

    def normal(self, rows: np.ndarray, k: int = 1) -> np.ndarray:
        """(len(rows), k) standard normals for the selected rows."""
        return ndtri(self.uniform(rows, k))
