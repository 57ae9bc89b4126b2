"""Counter-based normal variates keyed by ``(master_seed, stream)``.

Every Monte Carlo sample owns a stream index.  The bits for draw ``d`` of a
stream are ``philox4x64_10(counter=(d // 4, domain, 0, 0), key=(seed, stream))``,
so any draw of any stream can be produced independently of every other one.
This is what makes ensembles reproducible regardless of chunking, ordering or
worker count.

The Philox4x64-10 kernel matches ``numpy.random.Philox`` bit for bit; numpy's
generator is not used directly because it cannot vectorise across keys.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO53 = 2.0 ** -53

# Counter domains keep unrelated uses of one stream disjoint.
DOMAIN_PATH = 0
DOMAIN_AUX = 1
DOMAIN_REFINE = 2


@nb.njit(inline="always")
def _mulhilo(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    hi_hi = a_hi * b_hi
    cross = (lo_lo >> _S32) + (hi_lo & _MASK32) + lo_hi
    hi = hi_hi + (hi_lo >> _S32) + (cross >> _S32)
    return hi, a * b


@nb.njit(inline="always")
def _philox(c0, c1, c2, c3, k0, k1):
    for i in range(10):
        if i > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True)
def philox_block(counter, key):
    """Raw Philox4x64-10 output for one ``counter`` (4 words) and ``key`` (2 words)."""
    c0, c1, c2, c3 = _philox(counter[0], counter[1], counter[2], counter[3],
                             key[0], key[1])
    out = np.empty(4, dtype=np.uint64)
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3
    return out


@nb.njit(inline="always")
def _unit(x):
    # (0, 1], never zero so the logarithm is finite
    return (np.float64(x >> _S11) + 1.0) * _TWO53


@nb.njit(inline="always")
def normal_pair(seed, stream, domain, draw):
    """Draws ``draw`` and ``draw + 1`` of one stream; ``draw`` must be even."""
    c0, c1, c2, c3 = _philox(np.uint64(draw // 4), np.uint64(domain), np.uint64(0),
                             np.uint64(0), seed, stream)
    if draw % 4 == 0:
        r = np.sqrt(-2.0 * np.log(_unit(c0)))
        a = 2.0 * np.pi * _unit(c1)
    else:
        r = np.sqrt(-2.0 * np.log(_unit(c2)))
        a = 2.0 * np.pi * _unit(c3)
    return r * np.cos(a), r * np.sin(a)


@nb.njit(cache=True)
def _fill_normals(seed, streams, domain, start, out):
    count, n = out.shape
    two_pi = 2.0 * np.pi
    dom = np.uint64(domain)
    for i in range(n):
        key1 = streams[i]
        d = start
        j = 0
        while j < count:
            block = np.uint64(d // 4)
            lane = d % 4
            c0, c1, c2, c3 = _philox(block, dom, np.uint64(0), np.uint64(0),
                                     seed, key1)
            r1 = np.sqrt(-2.0 * np.log(_unit(c0)))
            r2 = np.sqrt(-2.0 * np.log(_unit(c2)))
            a1 = two_pi * _unit(c1)
            a2 = two_pi * _unit(c3)
            z0 = r1 * np.cos(a1)
            z1 = r1 * np.sin(a1)
            z2 = r2 * np.cos(a2)
            z3 = r2 * np.sin(a2)
            while lane < 4 and j < count:
                if lane == 0:
                    out[j, i] = z0
                elif lane == 1:
                    out[j, i] = z1
                elif lane == 2:
                    out[j, i] = z2
                else:
                    out[j, i] = z3
                lane += 1
                j += 1
                d += 1


def normals(master_seed, streams, start, count, domain=DOMAIN_PATH):
    """Standard normal draws ``start .. start+count-1`` for every stream.

    Parameters
    ----------
    master_seed : int
        64-bit experiment seed.
    streams : array_like of int
        Stream indices, one per sample.
    start, count : int
        First draw index and number of draws.
    domain : int
        Counter domain; different domains never share bits.

    Returns
    -------
    ndarray, shape (count, len(streams))
    """
    streams = np.ascontiguousarray(np.asarray(streams, dtype=np.uint64).ravel())
    out = np.empty((int(count), streams.size), dtype=np.float64)
    if out.size:
        _fill_normals(np.uint64(master_seed), streams, int(domain), int(start), out)
    return out


def normal_at(master_seed, stream, draw, domain=DOMAIN_PATH):
    """A single draw of a single stream."""
    return float(normals(master_seed, [stream], draw, 1, domain)[0, 0])


def stream_ids(base, count, stride=1):
    """Stream indices ``base, base+stride, ...`` as uint64."""
    return (np.uint64(base)
            + np.arange(count, dtype=np.uint64) * np.uint64(stride))
