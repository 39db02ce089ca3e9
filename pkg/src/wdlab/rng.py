"""Counter-based random numbers (Philox4x32-10).

Every random quantity in the package is a pure function of a 64-bit key and a
128-bit counter, so results never depend on evaluation order or on how work is
split between threads.  The kernels are numba-compiled and meant to be inlined
into the samplers.
"""

import math

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_INV32 = 1.0 / 4294967296.0
_TWO_PI = 2.0 * math.pi

# offset applied to signed lattice coordinates before they enter a counter word
COORD_OFFSET = 1 << 31

# stream tags: the high key word of a derived key, one per consumer
TAG_PATH = 0x50415448
TAG_BRIDGE = 0x42524447
TAG_NOISE = 0x4E4F4953
TAG_RESAMPLE = 0x52534D50
TAG_UNIFORM = 0x554E4946


@nb.njit(inline="always", cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds on counter (c0..c3) with key (k0, k1); uint32 in/out."""
    for _ in range(10):
        p0 = np.uint64(c0) * _M0
        p1 = np.uint64(c2) * _M1
        hi0 = np.uint32(p0 >> _S32)
        lo0 = np.uint32(p0 & _LO)
        hi1 = np.uint32(p1 >> _S32)
        lo1 = np.uint32(p1 & _LO)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@nb.njit(inline="always", cache=True)
def to_unit(r):
    """uint32 -> uniform on the open interval (0, 1)."""
    return (float(r) + 0.5) * _INV32


@nb.njit(inline="always", cache=True)
def box_muller4(r0, r1, r2, r3):
    """Four independent standard normals from four uint32 words."""
    a = math.sqrt(-2.0 * math.log(to_unit(r0)))
    b = math.sqrt(-2.0 * math.log(to_unit(r2)))
    t1 = _TWO_PI * to_unit(r1)
    t2 = _TWO_PI * to_unit(r3)
    return a * math.cos(t1), a * math.sin(t1), b * math.cos(t2), b * math.sin(t2)


@nb.njit(inline="always", cache=True)
def normal4(c0, c1, c2, c3, k0, k1):
    r0, r1, r2, r3 = philox4x32(c0, c1, c2, c3, k0, k1)
    return box_muller4(r0, r1, r2, r3)


def derive_key(seed: int, tag: int, stream: int = 0) -> tuple[int, int]:
    """Map (seed, tag, stream) to a Philox key.

    The seed and stream are folded with splitmix64 so nearby seeds give
    unrelated keys; the tag keeps different consumers of one seed apart.
    """
    z = _splitmix64((int(seed) & 0xFFFFFFFFFFFFFFFF) ^ _splitmix64(int(stream) + 0x632BE59BD9B4E019))
    z = _splitmix64(z ^ (int(tag) * 0x9E3779B97F4A7C15 & 0xFFFFFFFFFFFFFFFF))
    return z & 0xFFFFFFFF, (z >> 32) & 0xFFFFFFFF


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


@nb.njit(cache=True)
def _philox_block(ctr, key):
    out = np.empty(4, dtype=np.uint32)
    r = philox4x32(ctr[0], ctr[1], ctr[2], ctr[3], key[0], key[1])
    out[0], out[1], out[2], out[3] = r
    return out


def philox_block(counter, key) -> np.ndarray:
    """Python-level access to one Philox block (used by tests and tools)."""
    ctr = np.asarray(counter, dtype=np.uint32)
    k = np.asarray(key, dtype=np.uint32)
    return _philox_block(ctr, k)


@nb.njit(cache=True)
def _normals(k0, k1, c1, c2, n):
    out = np.empty(n)
    nblk = (n + 3) // 4
    for b in range(nblk):
        z = normal4(np.uint32(b), np.uint32(c1), np.uint32(c2), np.uint32(0), k0, k1)
        for j in range(4):
            i = 4 * b + j
            if i < n:
                out[i] = z[j]
    return out


def normals(seed: int, stream: int, n: int, tag: int = TAG_UNIFORM, sub: int = 0) -> np.ndarray:
    """n standard normals determined by (seed, stream, tag, sub)."""
    k0, k1 = derive_key(seed, tag, stream)
    return _normals(np.uint32(k0), np.uint32(k1), np.uint32(sub & 0xFFFFFFFF), np.uint32(0), int(n))


TAG_BALL = 0x42414C4C


@nb.njit(cache=True)
def _ball_points(k0, k1, id0, n, d, radius):
    out = np.empty((n, d))
    z = np.empty(d)
    nblk = (d + 3) // 4
    for i in range(n):
        sid = np.uint32(id0 + i)
        for b in range(nblk):
            g = normal4(sid, np.uint32(b), np.uint32(0), np.uint32(0), k0, k1)
            for j in range(4):
                if 4 * b + j < d:
                    z[4 * b + j] = g[j]
        u = to_unit(philox4x32(sid, np.uint32(0xFFFFFFFF), np.uint32(1), np.uint32(0), k0, k1)[0])
        nz = 0.0
        for j in range(d):
            nz += z[j] * z[j]
        scale = radius * u ** (1.0 / d) / math.sqrt(nz)
        for j in range(d):
            out[i, j] = z[j] * scale
    return out


def ball_points(seed: int, stream: int, n: int, d: int, radius: float, id0: int = 0) -> np.ndarray:
    """n points uniform in the d-ball of given radius; point i depends only on id0 + i."""
    k0, k1 = derive_key(seed, TAG_BALL, stream)
    return _ball_points(np.uint32(k0), np.uint32(k1), int(id0), int(n), int(d), float(radius))


@nb.njit(cache=True)
def _uniforms(k0, k1, c1, n):
    out = np.empty(n)
    for b in range((n + 3) // 4):
        w0, w1, w2, w3 = philox4x32(np.uint32(b), np.uint32(c1), np.uint32(2), np.uint32(0), k0, k1)
        i = 4 * b
        out[i] = to_unit(w0)
        if i + 1 < n:
            out[i + 1] = to_unit(w1)
        if i + 2 < n:
            out[i + 2] = to_unit(w2)
        if i + 3 < n:
            out[i + 3] = to_unit(w3)
    return out


def uniforms(seed: int, stream: int, n: int, tag: int = TAG_UNIFORM, sub: int = 0) -> np.ndarray:
    """n uniforms on (0, 1) determined by (seed, stream, tag, sub)."""
    k0, k1 = derive_key(seed, tag, stream)
    return _uniforms(np.uint32(k0), np.uint32(k1), np.uint32(sub & 0xFFFFFFFF), int(n))


# Acklam's rational approximation to the normal quantile (relative error < 1.2e-9)
_A1, _A2, _A3, _A4, _A5, _A6 = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
                                1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B1, _B2, _B3, _B4, _B5 = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
                           6.680131188771972e01, -1.328068155288572e01)
_C1, _C2, _C3, _C4, _C5, _C6 = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
                                -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D1, _D2, _D3, _D4 = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
_P_LOW = 0.02425


@nb.njit(inline="always", cache=True)
def normal_icdf(p):
    """Standard normal quantile for p in (0, 1)."""
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C1 * q + _C2) * q + _C3) * q + _C4) * q + _C5) * q + _C6) / (
            (((_D1 * q + _D2) * q + _D3) * q + _D4) * q + 1.0)
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log1p(-p))
        return -(((((_C1 * q + _C2) * q + _C3) * q + _C4) * q + _C5) * q + _C6) / (
            (((_D1 * q + _D2) * q + _D3) * q + _D4) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((_A1 * r + _A2) * r + _A3) * r + _A4) * r + _A5) * r + _A6) * q / (
        ((((_B1 * r + _B2) * r + _B3) * r + _B4) * r + _B5) * r + 1.0)


@nb.njit(inline="always", cache=True)
def word_normal(r):
    """One standard normal from one uint32 word by inversion."""
    return normal_icdf(to_unit(r))
