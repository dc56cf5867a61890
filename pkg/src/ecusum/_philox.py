"""Philox4x32-10 counter-based generator, usable from numba kernels.

A draw is a pure function of ``(key, counter)``: the simulation keys the
generator with the master seed and addresses draws by
``(index, substream, path)``, so path ``i`` sees the same numbers no matter
how paths are split across workers.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# substream ids (second counter word)
NORMAL = 0
UNIFORM = 1
ARRIVAL = 2

_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on 32-bit words held in uint64 containers."""
    c0 = np.uint64(c0)
    c1 = np.uint64(c1)
    c2 = np.uint64(c2)
    c3 = np.uint64(c3)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT
        lo0 = p0 & _MASK
        hi1 = p1 >> _SHIFT
        lo1 = p1 & _MASK
        c0 = (hi1 ^ c1 ^ k0) & _MASK
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK
        c3 = lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True)
def uniform_pair(index, substream, path, k0, k1):
    """Two doubles in ``(0, 1]`` with 53-bit resolution."""
    x0, x1, x2, x3 = philox4x32(index & 0xFFFFFFFF, substream, path & 0xFFFFFFFF, path >> 32, k0, k1)
    a = ((x0 << np.uint64(21)) ^ (x1 >> np.uint64(11))) & np.uint64(0x1FFFFFFFFFFFFF)
    b = ((x2 << np.uint64(21)) ^ (x3 >> np.uint64(11))) & np.uint64(0x1FFFFFFFFFFFFF)
    return (float(a) + 1.0) * _INV_2_53, (float(b) + 1.0) * _INV_2_53


@nb.njit(cache=True, nogil=True)
def uniform_at(j, substream, path, k0, k1):
    u0, u1 = uniform_pair(j >> 1, substream, path, k0, k1)
    return u0 if (j & 1) == 0 else u1


@nb.njit(cache=True, nogil=True)
def normal_at(j, path, k0, k1):
    """Standard normal number ``j`` of a path's stream (Box-Muller pairs)."""
    u0, u1 = uniform_pair(j >> 1, NORMAL, path, k0, k1)
    rad = math.sqrt(-2.0 * math.log(u0))
    if (j & 1) == 0:
        return rad * math.cos(_TWO_PI * u1)
    return rad * math.sin(_TWO_PI * u1)


def split_seed(seed: int) -> tuple[int, int]:
    """64-bit master seed to the two 32-bit key words."""
    seed = int(seed)
    if seed < 0 or seed >= 1 << 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed & 0xFFFFFFFF, seed >> 32


def philox4x32_reference(ctr: tuple[int, int, int, int], key: tuple[int, int]) -> tuple[int, int, int, int]:
    """Plain-Python Philox4x32-10, for cross-checking the compiled kernel."""
    c = list(ctr)
    k = list(key)
    for _ in range(10):
        p0 = 0xD2511F53 * c[0]
        p1 = 0xCD9E8D57 * c[2]
        c = [((p1 >> 32) ^ c[1] ^ k[0]) & 0xFFFFFFFF, p1 & 0xFFFFFFFF, ((p0 >> 32) ^ c[3] ^ k[1]) & 0xFFFFFFFF, p0 & 0xFFFFFFFF]
        k = [(k[0] + 0x9E3779B9) & 0xFFFFFFFF, (k[1] + 0xBB67AE85) & 0xFFFFFFFF]
    return tuple(c)  # type: ignore[return-value]
