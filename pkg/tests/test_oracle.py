import math

import numpy as np
import pytest

from wdlab import oracle as O
from wdlab.constants import green_function, rate_constant
from wdlab.stats import EstimateWithError

DT = 1 / 32


def test_moment_request_validation():
    with pytest.raises(ValueError):
        O.MomentRequest(beta=0.1, n=3, T=1.0, N=1000)
    with pytest.raises(ValueError):
        O.MomentRequest(beta=0.1, n=2, T=1.0, N=10)
    with pytest.raises(ValueError):
        O.MomentRequest(beta=-0.1, n=2, T=1.0, N=1000)


def test_first_moment_and_beta_zero_are_exact(K3):
    assert O.annealed_moment(O.MomentRequest(0.5, 1, 4.0, 1000), K3).estimate == 1.0
    e = O.annealed_moment(O.MomentRequest(0.0, 2, 4.0, 1000, dt=DT), K3)
    assert e.estimate == 1.0 and e.stderr == 0.0
    assert O.variance_MT(0.0, 4.0, 1000, K3).estimate == 0.0


def test_above_bound_flagged(K3):
    with pytest.warns(UserWarning):
        e = O.annealed_moment(O.MomentRequest(2.0, 2, 1.0, 200, dt=DT), K3, beta0=1.0)
    assert e.diagnostics["above_beta0_bound"]


def test_two_path_moment_matches_relative_path(K3, beta_half):
    two = O.annealed_moment(O.MomentRequest(beta_half, 2, 4.0, 20_000, dt=DT, seed=1), K3)
    rel = O.variance_MT(beta_half, 4.0, 20_000, K3, dt=DT, seed=2)
    z = (two.estimate - 1 - rel.estimate) / math.hypot(two.stderr, rel.stderr)
    assert abs(z) < 4


def test_fourth_moment_exceeds_square_of_second(K3, beta_half):
    m2 = O.annealed_moment(O.MomentRequest(beta_half, 2, 2.0, 4000, dt=DT, seed=3), K3)
    m4 = O.annealed_moment(O.MomentRequest(beta_half, 4, 2.0, 4000, dt=DT, seed=3), K3)
    assert m4.estimate > m2.estimate > 1.0


def test_ess():
    assert O.ess(np.ones(10)) == pytest.approx(10)
    assert O.ess([0, 0, 3.0]) == pytest.approx(1)
    assert O.ess(np.zeros(4)) == 0.0


def test_occupation_nondecreasing(K3):
    b = O.single_path_integrals(K3, 8.0, 500, DT, seed=0, checkpoints=[1.0, 2.0, 4.0, 8.0])
    assert np.all(np.diff(b.integrals[:, :, 0], axis=1) >= 0)


def test_c1_first_order_closed_form():
    assert O.c1_first_order(1.0, 3) == pytest.approx(1 / (4 * math.pi))
    assert O.c1_first_order(0.5, 4) == pytest.approx(0.25 * 0.5 * green_function(1.0, 4))


def test_covariance_far_field_matches_newton(K3, bundle3):
    beta = 0.1 * bundle3.beta0_bound
    x = np.array([2.0, 0.0, 0.0])
    e = O.covariance_Minf(beta, x, 8000, K3, T_cut=50.0, dt=DT, seed=5)
    target = O.c1_first_order(beta, 3) / 2.0
    assert abs(e.estimate - target) < 4 * e.stderr + 0.02 * target
    assert e.diagnostics["rescaled"] == pytest.approx(2.0 * e.estimate)


def test_covariance_beta_zero():
    assert O.covariance_Minf(0.0, np.ones(3), 100, None).estimate == 0.0


def test_tail_completion_caps_inside_ball():
    v = O.tail_completion(np.array([0.2, 1.0, 2.0]), 0.3, 3)
    np.testing.assert_allclose(v, [1.3, 1.3, 1.15])


def test_fit_c1_recovers_constant():
    radii = [0.5, 1.0, 2.0, 4.0]
    est = [EstimateWithError(0.7 / max(r, 1e-9), 0.01, 100) for r in radii]
    c1, se = O.fit_c1(est, radii, 3)
    assert c1 == pytest.approx(0.7)
    assert 0 < se < 0.01


def test_lookup_continuous_at_unit_radius():
    lk = O.CovarianceLookup(3, 0.2, np.linspace(0, 1, 5), np.array([0.4, 0.35, 0.3, 0.25, 0.2]))
    np.testing.assert_allclose(lk(np.array([0.0, 1.0, 1 - 1e-12, 2.0])), [0.4, 0.2, 0.2, 0.1])


def test_level_target():
    m2 = EstimateWithError(1.5, 0.01, 10)
    t = O.l2_level_target(0.02, 0.001, m2, 3)
    assert t.estimate == pytest.approx(0.02 * 1.5 * rate_constant(3))
    assert t.stderr > 0


def test_endpoint_density_limit(K3):
    assert O.endpoint_density_integral(1e8, K3) == pytest.approx((4 * math.pi) ** -1.5, rel=5e-5)


@pytest.mark.parametrize("endpoint_is", [True, False])
def test_lt_first_term_beta_zero(K3, endpoint_is):
    T = 2.0
    e = O.lt_first_term(0.0, T, 20_000, K3, dt=DT, seed=2, endpoint_is=endpoint_is)
    assert abs(e.estimate - O.endpoint_density_integral(T, K3)) < 4 * e.stderr


def test_expected_lt_beta_zero_vanishes_at_matched_c3(K3):
    T = 4.0
    a = O.endpoint_density_integral(T, K3)
    e = O.expected_LT(0.0, T, a, 20_000, K3, dt=DT, seed=1)
    assert abs(e.estimate) < 4 * e.stderr


def test_second_moment_lt_beta_zero(K3, bundle3):
    T = 4.0
    e = O.second_moment_LT(0.0, T, bundle3.c3, 20_000, K3, dt=DT, seed=3)
    assert abs(e.estimate - O.second_moment_LT_beta0(T, bundle3.c3, K3)) < 4 * e.stderr


def test_l2_curve_decreases(K3, beta_half):
    c1 = O.c1_first_order(beta_half, 3)
    lk = O.CovarianceLookup(3, c1, np.linspace(0, 1, 3), np.full(3, c1))
    curve = O.l2_distance_curve(beta_half, [2.0, 8.0], 4000, K3, lk, dt=DT, seed=0)
    assert curve.values[1] < curve.values[0]
    r, _ = curve.rescaled(3)
    np.testing.assert_allclose(r, curve.values * np.sqrt(curve.T))


def test_d4_covariance_runs(K4):
    e = O.covariance_Minf(0.3, np.array([1.5, 0, 0, 0]), 500, K4, T_cut=10.0, dt=DT)
    assert e.estimate > 0
