"""Counter-based normal variates.

A standard normal is a pure function of ``(seed, stream, position)``: the
Philox4x32-10 block cipher maps a 128-bit counter under a 64-bit key to
128 random bits, and a 256-layer ziggurat turns 64 of those bits into a
normal. Nothing is sequential, so any replication or time step can be drawn
independently, in any order, on any thread, and always gives the same value.

Layout of the Philox input for normal number ``n`` of ``stream``::

    key     = (seed & 0xffffffff, seed >> 32)
    counter = (k & 0xffffffff, k >> 32, stream, tag)

with ``k = n // 2, tag = 0`` for the main draw (the two 64-bit halves of the
output serve positions ``2k`` and ``2k + 1``) and ``k = n, tag = 1, 2, ...``
for the rare extra uniforms a ziggurat rejection needs.
"""

import math

import numba as nb
import numpy as np

MAX_STREAM = 2**32 - 1

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S8 = np.uint64(8)
_S1 = np.uint64(1)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_MASK52 = np.uint64(0x000FFFFFFFFFFFFF)
_MASK8 = np.uint64(0xFF)


def _ziggurat_tables():
    # 256-layer Marsaglia-Tsang ziggurat for the standard normal, with 52-bit
    # abscissa resolution.
    r = 3.6541528853610088
    v = 0.00492867323399
    m1 = 2.0**52
    ki = np.zeros(256, dtype=np.int64)
    wi = np.zeros(256)
    fi = np.zeros(256)
    dn = tn = r
    q = v / math.exp(-0.5 * dn * dn)
    ki[0] = int((dn / q) * m1)
    ki[1] = 0
    wi[0] = q / m1
    wi[255] = dn / m1
    fi[0] = 1.0
    fi[255] = math.exp(-0.5 * dn * dn)
    for i in range(254, 0, -1):
        dn = math.sqrt(-2.0 * math.log(v / dn + math.exp(-0.5 * dn * dn)))
        ki[i + 1] = int((dn / tn) * m1)
        tn = dn
        fi[i] = math.exp(-0.5 * dn * dn)
        wi[i] = dn / m1
    return ki, wi, fi, r


_KI, _WI, _FI, _ZIG_R = _ziggurat_tables()
_ZIG_INV_R = 1.0 / _ZIG_R


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds. All arguments are uint64 holding 32-bit words."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK32
        c0, c1, c2, c3 = (hi1 ^ c1 ^ k0) & _MASK32, lo1, (hi0 ^ c3 ^ k1) & _MASK32, lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def _to_unit(u):
    # uniform on [0, 1) from the top 53 bits
    return (u >> _S11) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, inline="always")
def _split(word):
    # 63 usable bits: 8 for the layer, 1 for the sign, 52 for the abscissa
    r = np.int64(word >> _S1)
    idx = r & 0xFF
    sign = (r >> 8) & 1
    rabs = (r >> 9) & 0x000FFFFFFFFFFFFF
    return idx, sign, rabs


@nb.njit(cache=True)
def _normal_slow(k0, k1, stream, n, idx, sign, rabs):
    # Ziggurat rejection path: extra uniforms come from tagged counters.
    n64 = np.uint64(n)
    nlo = n64 & _MASK32
    nhi = n64 >> _S32
    tag = np.uint64(1)
    while True:
        x = rabs * _WI[idx]
        if sign:
            x = -x
        if rabs < _KI[idx]:
            return x
        c0, c1, c2, c3 = philox4x32(nlo, nhi, stream, tag, k0, k1)
        tag += _ONE
        u1 = _to_unit((c1 << _S32) | c0)
        u2 = _to_unit((c3 << _S32) | c2)
        if idx == 0:
            xx = -_ZIG_INV_R * math.log1p(-u1)
            yy = -math.log1p(-u2)
            if yy + yy > xx * xx:
                return -(_ZIG_R + xx) if sign else _ZIG_R + xx
            # tail attempt failed: retry with fresh bits, same layer
            continue
        if (_FI[idx - 1] - _FI[idx]) * u1 + _FI[idx] < math.exp(-0.5 * x * x):
            return x
        # wedge rejected: restart the ziggurat step from a fresh word
        idx, sign, rabs = _split((c3 << _S32) | c2)


@nb.njit(cache=True, inline="always")
def _fast(word, out, flags, i):
    idx, sign, rabs = _split(word)
    x = rabs * _WI[idx]
    out[i] = -x if sign else x
    flags[i] = rabs >= _KI[idx]


@nb.njit(cache=True, nogil=True)
def fill_normals_kernel(out, flags, seed, stream, start):
    """Fill ``out`` with the normals at positions start, start+1, ...

    Two passes: a branch-free ziggurat fast path over every position (this
    keeps the loop vectorizable), then the rare rejected positions, marked in
    ``flags``, are redrawn exactly.
    """
    s = np.uint64(seed)
    k0 = s & _MASK32
    k1 = s >> _S32
    st = np.uint64(stream)
    zero = np.uint64(0)
    size = out.shape[0]
    i = 0
    if size > 0 and start % 2 == 1:
        blk = np.uint64(start >> 1)
        c0, c1, c2, c3 = philox4x32(blk & _MASK32, blk >> _S32, st, zero, k0, k1)
        _fast((c3 << _S32) | c2, out, flags, 0)
        i = 1
    base = (start + i) >> 1
    npairs = (size - i) // 2
    for j in range(npairs):
        blk = np.uint64(base + j)
        c0, c1, c2, c3 = philox4x32(blk & _MASK32, blk >> _S32, st, zero, k0, k1)
        _fast((c1 << _S32) | c0, out, flags, i + 2 * j)
        _fast((c3 << _S32) | c2, out, flags, i + 2 * j + 1)
    if i + 2 * npairs < size:
        blk = np.uint64(base + npairs)
        c0, c1, c2, c3 = philox4x32(blk & _MASK32, blk >> _S32, st, zero, k0, k1)
        _fast((c1 << _S32) | c0, out, flags, size - 1)
    for i in range(size):
        if flags[i]:
            n = start + i
            blk = np.uint64(n >> 1)
            c0, c1, c2, c3 = philox4x32(blk & _MASK32, blk >> _S32, st, zero, k0, k1)
            word = (c1 << _S32) | c0 if n % 2 == 0 else (c3 << _S32) | c2
            idx, sign, rabs = _split(word)
            out[i] = _normal_slow(k0, k1, st, n, idx, sign, rabs)


def normals(seed, stream, start, shape):
    """Standard normals at consecutive positions, reshaped to ``shape``.

    Parameters
    ----------
    seed : int
        64-bit key.
    stream : int
        32-bit stream identifier (typically the replication index).
    start : int
        Position of the first normal.
    shape : int or tuple of int
    """
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    size = int(np.prod(shape))
    out = np.empty(size, dtype=np.float64)
    flags = np.empty(size, dtype=np.bool_)
    fill_normals_kernel(out, flags, _as_seed(seed), _as_stream(stream), int(start))
    return out.reshape(shape)


def philox_block(counter, key):
    """Raw Philox4x32-10 output for a 4-word counter and 2-word key (for testing)."""
    c = [np.uint64(w) for w in counter]
    k = [np.uint64(w) for w in key]
    return tuple(int(w) for w in philox4x32(c[0], c[1], c[2], c[3], k[0], k[1]))


def _as_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return seed


def _as_stream(stream):
    stream = int(stream)
    if not 0 <= stream <= MAX_STREAM:
        raise ValueError("stream must fit in 32 bits")
    return stream


def stream_id(block, replication):
    """Pack an (epsilon-index, replication-index) pair into one 32-bit stream."""
    if not (0 <= block < 2**11 and 0 <= replication < 2**21):
        raise ValueError("block < 2048 and replication < 2097152 required")
    return (block << 21) | replication
