"""Counter-based random numbers (Philox4x32-10).

Every random variate used by the solver is a pure function of
``(seed, c0, c1, tag)``, so any draw can be regenerated without replaying a
sequential stream.  This is what makes forward replays, finite-difference
runs with common random numbers, and multi-threaded stepping bit-identical.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint64(0x9E3779B9)
PHILOX_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# purpose tags (third counter word)
TAG_INIT = 1
TAG_SHUFFLE = 2
TAG_ACCEPT = 3
TAG_ANGLES = 4

_INV_2_52 = 1.0 / 4503599627370496.0


def split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def philox4x32(counter, key):
    """Philox4x32 with 10 rounds, vectorised over the leading axis.

    Parameters
    ----------
    counter : array_like of shape (..., 4)
        32-bit counter words.
    key : pair of int
        32-bit key words.

    Returns
    -------
    ndarray of uint64, shape (..., 4), each entry < 2**32.
    """
    ctr = np.asarray(counter, dtype=np.uint64) & _MASK32
    c0, c1, c2, c3 = (ctr[..., i].copy() for i in range(4))
    k0 = np.uint64(key[0]) & _MASK32
    k1 = np.uint64(key[1]) & _MASK32
    for _ in range(10):
        p0 = c0 * PHILOX_M0
        p1 = c2 * PHILOX_M1
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + PHILOX_W0) & _MASK32
        k1 = (k1 + PHILOX_W1) & _MASK32
    return np.stack([c0, c1, c2, c3], axis=-1)


def words_to_uniform(hi, lo):
    """Combine two 32-bit words into a double in the open interval (0, 1).

    Uses 52 random bits so that ``(k + 0.5) / 2**52`` is exact and never
    rounds up to 1.
    """
    a = (np.asarray(hi, dtype=np.uint64) >> np.uint64(6)).astype(np.float64)
    b = (np.asarray(lo, dtype=np.uint64) >> np.uint64(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) * _INV_2_52


def uniform_pairs(seed: int, c0, c1, tag: int) -> np.ndarray:
    """Two uniforms per counter ``(c0, c1, tag, 0)``; returns shape (n, 2)."""
    c0, c1 = np.broadcast_arrays(np.asarray(c0, dtype=np.uint64), np.asarray(c1, dtype=np.uint64))
    c0 = np.atleast_1d(c0)
    c1 = np.atleast_1d(c1)
    ctr = np.zeros(c0.shape + (4,), dtype=np.uint64)
    ctr[..., 0] = c0
    ctr[..., 1] = c1
    ctr[..., 2] = tag
    w = philox4x32(ctr, split_seed(seed))
    out = np.empty(c0.shape + (2,))
    out[..., 0] = words_to_uniform(w[..., 0], w[..., 1])
    out[..., 1] = words_to_uniform(w[..., 2], w[..., 3])
    return out


def initial_normals(seed: int, n: int) -> np.ndarray:
    """Standard normal draws of shape (n, 3) by inverse-CDF transform."""
    idx = np.arange(n, dtype=np.uint64)
    u01 = uniform_pairs(seed, idx, 0, TAG_INIT)
    u2 = uniform_pairs(seed, idx, 1, TAG_INIT)[:, 0]
    u = np.column_stack([u01, u2])
    return ndtri(u)
