"""Counter-based Gaussian draws (Philox4x32-10).

Every pair's noise is a pure function of ``(seed, step, i, j, stream)`` so
results do not depend on pair enumeration order or thread count.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

STREAM_PAIR_W = 0
STREAM_PAIR_V = 1
STREAM_DPD = 2


def philox4x32(counter: np.ndarray, key: tuple[int, int], rounds: int = 10) -> np.ndarray:
    """Apply Philox4x32 to a (4, M) array of 32-bit counters."""
    c = [np.asarray(w, dtype=np.uint64) & _MASK for w in counter]
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = _M0 * c[0]
        p1 = _M1 * c[2]
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c = [hi1 ^ c[1] ^ np.uint64(k0), lo1, hi0 ^ c[3] ^ np.uint64(k1), lo0]
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return np.stack(c).astype(np.uint32)


def _seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def pair_normals(seed: int, step, i: np.ndarray, j: np.ndarray, count: int, stream: int) -> np.ndarray:
    """Standard normals keyed by (seed, step, i, j, stream).

    ``step`` may be an integer or a 1-D array of K step indices; the result has
    shape ``(M, count)`` or ``(K, M, count)`` respectively.
    """
    i = np.asarray(i, dtype=np.uint64)
    j = np.asarray(j, dtype=np.uint64)
    steps = np.atleast_1d(np.asarray(step, dtype=np.uint64))
    nblocks = (count + 3) // 4
    m = i.size
    shape = (steps.size, m, nblocks)
    c0 = np.broadcast_to(i[None, :, None], shape)
    c1 = np.broadcast_to(j[None, :, None], shape)
    c2 = np.broadcast_to(steps[:, None, None] & _MASK, shape)
    blocks = np.arange(nblocks, dtype=np.uint64)
    c3 = np.broadcast_to((steps[:, None, None] >> _SHIFT) << np.uint64(24)
                         | np.uint64(stream) << np.uint64(16) | blocks[None, None, :], shape)
    bits = philox4x32([c0.ravel(), c1.ravel(), c2.ravel(), c3.ravel()], _seed_key(seed))
    u = (bits.astype(np.float64) + 0.5) * 2.0 ** -32
    # Box-Muller on word pairs (0,1) and (2,3)
    rad_a = np.sqrt(-2.0 * np.log(u[0]))
    rad_b = np.sqrt(-2.0 * np.log(u[2]))
    ang_a = 2.0 * np.pi * u[1]
    ang_b = 2.0 * np.pi * u[3]
    z = np.stack([rad_a * np.cos(ang_a), rad_a * np.sin(ang_a),
                  rad_b * np.cos(ang_b), rad_b * np.sin(ang_b)], axis=-1)
    z = z.reshape(steps.size, m, nblocks * 4)[..., :count]
    return z if np.ndim(step) else z[0]
