import math

import numpy as np
import pytest
from scipy import stats

from wdlab.constants import laplacian_at_origin, radial_measure
from wdlab.paths import (Term, brownian_density, frozen_path, pair_kernel_integral,
                         path_functionals, path_kernel_integral, refine_path, sample_bridge, sample_path,
                         steps_for, tail_occupation_bound, term_matrix)

R2 = math.sqrt(2.0)


def test_sample_path_deterministic_and_starts_at_x():
    a = sample_path(5, 3, 3, [1.0, 2.0, 3.0], 0.1, 20)
    b = sample_path(5, 3, 3, [1.0, 2.0, 3.0], 0.1, 20)
    c = sample_path(5, 4, 3, [1.0, 2.0, 3.0], 0.1, 20)
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)
    assert np.array_equal(a.positions[0], [1.0, 2.0, 3.0])
    assert a.T == pytest.approx(2.0)


def test_single_step_increments(K3):
    dt, N = 0.25, 100_000
    b = path_functionals(K3, N, 1, dt, [Term(0)], np.zeros((1, 3)), seed=1, max_stride=1)
    inc = b.positions[:, -1, 0, :]
    assert np.all(np.abs(inc.mean(axis=0)) < 4 * math.sqrt(dt / N))
    # chi-square style variance check per coordinate
    var = inc.var(axis=0, ddof=1)
    assert np.all(np.abs(var / dt - 1) < 4 * math.sqrt(2 / (N - 1)))


def test_second_moment_of_endpoint(K3):
    T, dt, N = 4.0, 1 / 16, 100_000
    b = path_functionals(K3, N, steps_for(T, dt), dt, [Term(0, -1, R2)], np.zeros((1, 3)), seed=2)
    r2 = np.sum(b.positions[:, -1, 0, :] ** 2, axis=1)
    assert abs(r2.mean() - 3 * T) < 3 * r2.std() / math.sqrt(N)


def test_steps_for():
    assert steps_for(2.0, 1 / 32) == 64
    with pytest.raises(ValueError):
        steps_for(1.0, 0.3)


def test_bridge_pinning_and_midpoint_variance():
    T, dt = 2.0, 1 / 16
    y = np.array([0.3, -0.2, 0.1])
    mids = []
    for s in range(10_000):
        p = sample_bridge(9, s, 3, np.zeros(3), y, T, dt)
        assert np.array_equal(p.positions[-1], y)
        mids.append(p.positions[p.n // 2])
    mids = np.array(mids)
    assert np.all(np.abs(mids.mean(axis=0) - y / 2) < 4 * math.sqrt(T / 4 / len(mids)))
    v = mids.var(axis=0, ddof=1)
    assert np.all(np.abs(v - T / 4) < 3 * (T / 4) * math.sqrt(2 / (len(mids) - 1)))


def test_bridge_density_ratio_identity(K3):
    # E^bridge[f(W_s)] = E^free[f(W_s) rho(T - s, y - W_s)] / rho(T, y)
    T, dt, s = 2.0, 1 / 16, 1.0
    y = np.array([0.5, 0.0, 0.0])
    f = lambda w: np.cos(w[..., 0]) * np.exp(-0.5 * np.sum(w * w, axis=-1))
    bridge = np.array([f(sample_bridge(4, i, 3, np.zeros(3), y, T, dt).positions[16]) for i in range(20_000)])
    N = 200_000
    b = path_functionals(K3, N, steps_for(s, dt), dt, [Term(0)], np.zeros((1, 3)), seed=11)
    w = b.positions[:, -1, 0, :]
    free = f(w) * brownian_density(T - s, y - w, 3) / brownian_density(T, y, 3)
    z = (bridge.mean() - free.mean()) / math.hypot(bridge.std() / math.sqrt(bridge.size),
                                                  free.std() / math.sqrt(N))
    assert abs(z) < 3


def test_free_endpoint_vs_bridge_interior_ks():
    T, dt = 1.0, 1 / 8
    free_mid, bridge_mid = [], []
    for i in range(10_000):
        p = sample_path(21, i, 3, np.zeros(3), dt, 8)
        free_mid.append(p.positions[4, 0])
        q = sample_bridge(22, i, 3, np.zeros(3), p.positions[-1], T, dt)
        bridge_mid.append(q.positions[4, 0])
    assert stats.ks_2samp(free_mid, bridge_mid).pvalue > 0.01


def test_frozen_and_far_paths(K3):
    p = frozen_path(3, np.zeros(3), 1 / 128, 512)
    assert abs(path_kernel_integral(p, K3).value - 4.0 * K3.V0) < 1e-12
    far = frozen_path(3, [5.0, 0, 0], 1 / 128, 512)
    assert path_kernel_integral(far, K3).value == 0.0
    assert pair_kernel_integral(p, p, K3).value == pytest.approx(4.0 * K3.V0, abs=1e-12)


def test_pair_integral_zero_when_separated(K3):
    a = sample_path(1, 0, 3, np.zeros(3), 1 / 1024, 10)
    b = sample_path(1, 1, 3, [3.0, 0, 0], 1 / 1024, 10)
    assert pair_kernel_integral(a, b, K3).value == 0.0
    with pytest.raises(ValueError):
        pair_kernel_integral(a, sample_path(1, 1, 3, np.zeros(3), 1 / 1024, 11), K3)


def test_integral_bounds(K3):
    for s in range(20):
        p = sample_path(3, s, 3, np.zeros(3), 1 / 64, 256)
        v = path_kernel_integral(p, K3).value
        assert 0.0 <= v <= p.T * K3.V0


def test_pair_and_scaled_single_have_equal_means(K3):
    T, dt, N = 2.0, 1 / 64, 40_000
    n = steps_for(T, dt)
    single = path_functionals(K3, N, n, dt, [Term(0, -1, R2)], np.zeros((1, 3)), seed=5).integrals[:, -1, 0]
    pair = path_functionals(K3, N, n, dt, [Term(0, 1, 1.0)], np.zeros((2, 3)), seed=6).integrals[:, -1, 0]
    se = math.hypot(single.std() / math.sqrt(N), pair.std() / math.sqrt(N))
    assert abs(single.mean() - pair.mean()) < 3 * se


def _expected_occupation(K, T, d=3, n_t=400):
    """E_0 int_0^T V(sqrt2 W_s) ds by quadrature over s and radius."""
    r, m = radial_measure(K)
    ts = np.linspace(0, T, n_t + 1)[1:]
    f = [np.sum(m * (2 * math.pi * t) ** (-d / 2) * np.exp(-(r / R2) ** 2 / (2 * t))) * 2 ** (-d / 2) for t in ts]
    f = np.concatenate([[K.V0], f])
    return float(np.sum((f[:-1] + f[1:]) / 2) * T / n_t)


def test_stride_engine_unbiased(K3):
    T, dt, N = 4.0, 1 / 128, 40_000
    n = steps_for(T, dt)
    target = _expected_occupation(K3, T, n_t=4000) - dt * dt / 12 * laplacian_at_origin(K3)
    for ms in (1, 1 << 16):
        v = path_functionals(K3, N, n, dt, [Term(0, -1, R2)], np.zeros((1, 3)), seed=7,
                             max_stride=ms).integrals[:, -1, 0]
        assert abs(v.mean() - target) < 3 * v.std() / math.sqrt(N)


def test_checkpoints_monotone_and_final(K3):
    b = path_functionals(K3, 200, 256, 1 / 32, [Term(0, -1, R2)], np.zeros((1, 3)), checkpoints=[64, 128],
                         seed=1)
    assert list(b.checkpoints) == [64, 128, 256]
    assert np.all(np.diff(b.integrals[:, :, 0], axis=1) >= 0)


def test_engine_thread_and_shard_invariance(K3):
    args = (K3, 9000, 128, 1 / 32, [Term(0, -1, R2)], np.zeros((1, 3)))
    a = path_functionals(*args, seed=3, threads=1)
    b = path_functionals(*args, seed=3, threads=3)
    assert np.array_equal(a.integrals, b.integrals)
    c = path_functionals(K3, 1000, 128, 1 / 32, [Term(0, -1, R2)], np.zeros((1, 3)), seed=3, id0=5000)
    assert np.array_equal(c.integrals, a.integrals[5000:6000])


def test_bridge_engine_pins_endpoint(K3):
    ends = np.tile([[0.2, 0.1, 0.0]], (50, 1, 1))
    b = path_functionals(K3, 50, 64, 1 / 16, [Term(0, -1, R2)], np.zeros((1, 3)), ends=ends, bridge=[True], seed=2)
    assert np.allclose(b.positions[:, -1, 0, :], ends[:, 0, :], atol=1e-12)


def test_refinement_converges(K3):
    dt = 1 / 8
    d1, d2 = [], []
    for s in range(300):
        p = sample_path(31, s, 3, np.zeros(3), dt, 16)
        f1 = refine_path(p, 1, s)
        f2 = refine_path(f1, 2, s)
        assert np.array_equal(f1.positions[::2], p.positions)
        i0, i1, i2 = (path_kernel_integral(q, K3).value for q in (p, f1, f2))
        d1.append(abs(i1 - i0))
        d2.append(abs(i2 - i1))
    assert np.mean(d2) < np.mean(d1)


def test_term_matrix():
    C = term_matrix([Term(0, 1, 2.0), [0.5, 0.5]], 2)
    assert np.array_equal(C, [[2.0, -2.0], [0.5, 0.5]])
    with pytest.raises(ValueError):
        term_matrix([[1.0, 2.0, 3.0]], 2)


def test_tail_bound_decreases():
    assert tail_occupation_bound(200, 4.0) < tail_occupation_bound(50, 4.0)
