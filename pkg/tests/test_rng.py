import math

import numba as nb
import numpy as np
import pytest
from scipy import special

from wdlab import rng


@nb.njit
def _philox(c, k):
    return rng.philox4x32(np.uint32(c[0]), np.uint32(c[1]), np.uint32(c[2]), np.uint32(c[3]),
                          np.uint32(k[0]), np.uint32(k[1]))


@pytest.mark.parametrize("ctr,key,expected", [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
])
def test_philox_known_answers(ctr, key, expected):
    assert tuple(int(x) for x in _philox(ctr, key)) == expected


def test_philox_block_matches_scalar():
    out = rng.philox_block((1, 2, 3, 4), (5, 6))
    assert tuple(int(x) for x in out) == tuple(int(x) for x in _philox((1, 2, 3, 4), (5, 6)))


def test_derive_key_separates_tags_and_streams():
    keys = {rng.derive_key(7, tag, s) for tag in (rng.TAG_PATH, rng.TAG_NOISE) for s in range(50)}
    assert len(keys) == 100
    assert rng.derive_key(7, rng.TAG_PATH, 3) == rng.derive_key(7, rng.TAG_PATH, 3)


def test_normals_moments():
    z = rng.normals(1, 0, 400_000)
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * math.sqrt(2 / z.size)
    assert np.array_equal(z, rng.normals(1, 0, 400_000))


def test_uniforms_open_interval():
    u = rng.uniforms(3, 1, 100_000)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / u.size)


@nb.njit
def _icdf(p):
    out = np.empty_like(p)
    for i in range(p.size):
        out[i] = rng.normal_icdf(p[i])
    return out


def test_normal_icdf_accuracy():
    p = np.concatenate([np.linspace(1e-9, 1 - 1e-9, 200_001), 10.0 ** -np.linspace(1, 9.5, 500)])
    ref = special.ndtri(p)
    err = np.abs(_icdf(p) - ref) / np.maximum(1.0, np.abs(ref))
    assert err.max() < 2e-9


def test_ball_points_uniform():
    x = rng.ball_points(0, 1, 200_000, 3, 0.5)
    r = np.linalg.norm(x, axis=1)
    assert r.max() <= 0.5
    # |x|^3 / R^3 is uniform on (0, 1)
    u = (r / 0.5) ** 3
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / u.size)
    assert np.all(np.abs(x.mean(axis=0)) < 4 * 0.5 / math.sqrt(5 * u.size))
