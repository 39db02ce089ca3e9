import math

import numpy as np
import pytest
from scipy import stats as sps

from wdlab import rng
from wdlab.stats import (EstimateWithError, McAccumulator, accumulate_merge, chi2_variance_ci, combined_z,
                         estimate_from_samples, fit_power_slope, g_profile, ks_critical, ks_pvalue, ks_statistic,
                         normality_report, replicate_variance, sample_cov_with_se, variance_profile_check)


def test_merge_identity_and_commutativity():
    a = McAccumulator.of([1.0, 2.5, -3.0])
    b = McAccumulator.of([4.0])
    assert accumulate_merge(a, McAccumulator()) == a
    assert accumulate_merge(a, b) == accumulate_merge(b, a)


def test_merge_exact_for_integers():
    m = accumulate_merge(McAccumulator.of([1, 2]), McAccumulator.of([3]))
    ref = McAccumulator.of([1, 2, 3])
    assert m == ref
    assert m.mean == 2.0
    assert m.variance == 1.0
    assert m.central_moments() == ref.central_moments()


def test_merge_associative():
    x = rng.normals(0, 1, 30)
    a, b, c = (McAccumulator.of(x[i:i + 10]) for i in (0, 10, 20))
    l = accumulate_merge(accumulate_merge(a, b), c)
    r = accumulate_merge(a, accumulate_merge(b, c))
    assert l.n == r.n == 30
    assert l.mean == pytest.approx(r.mean, abs=1e-15)
    assert l.variance == pytest.approx(np.var(x, ddof=1), rel=1e-12)


def test_accumulator_moments_match_scipy():
    x = rng.normals(4, 0, 5000) ** 2
    acc = McAccumulator.of(x)
    assert acc.skewness == pytest.approx(sps.skew(x), rel=1e-8)
    assert acc.excess_kurtosis == pytest.approx(sps.kurtosis(x), rel=1e-8)


def test_estimate_z_and_combined():
    e = EstimateWithError(1.0, 0.1, 100)
    assert e.z(0.7) == pytest.approx(3.0)
    assert combined_z(EstimateWithError(1.0, 0.3, 1), EstimateWithError(0.0, 0.4, 1)) == pytest.approx(2.0)
    assert estimate_from_samples([1.0, 3.0]).stderr == pytest.approx(1.0)


@pytest.mark.parametrize("n", [100, 1000])
@pytest.mark.parametrize("alpha", [0.05, 0.01])
def test_ks_critical_values_against_exact(n, alpha):
    assert abs(ks_critical(n, alpha) - sps.kstwo.ppf(1 - alpha, n)) < 1e-3


def test_ks_statistic_matches_scipy():
    x = rng.normals(9, 0, 500)
    assert ks_statistic(x, sps.norm.cdf) == pytest.approx(sps.kstest(x, "norm").statistic, rel=1e-12)
    assert 0.0 <= ks_pvalue(0.01, 500) <= 1.0


def test_normality_pass_rate_on_gaussian_samples():
    passes = 0
    for s in range(40):
        rep = normality_report(rng.normals(100 + s, 0, 10_000), 1.0, max_skew=0.1, max_exkurt=0.2)
        passes += rep.passed
        assert 0.0 <= rep.ks_pvalue <= 1.0
    assert passes >= 36


def test_normality_negative_control():
    u = rng.uniforms(7, 0, 10_000)
    x = -np.log(u) - 1.0
    rep = normality_report(x, 1.0)
    assert not rep.checks["kurtosis"] and not rep.checks["ks"]


def test_normality_degenerate_and_small():
    rep = normality_report(np.zeros(200), 1.0)
    assert rep.variance == 0.0 and not rep.passed
    with pytest.raises(ValueError):
        normality_report(np.zeros(50), 1.0)


def test_power_slope():
    T = np.array([4.0, 8, 16, 32, 64])
    fit = fit_power_slope(T, 3.0 * T ** -0.5)
    assert abs(fit.slope + 0.5) < 1e-12
    assert abs(fit_power_slope(T, np.full(5, 2.0)).slope) < 1e-12
    with pytest.raises(ValueError):
        fit_power_slope(T, -T)
    with pytest.raises(ValueError):
        fit_power_slope(T[:2], T[:2])


def test_weighted_power_slope_has_se():
    T = np.array([4.0, 8, 16])
    fit = fit_power_slope(T, T ** -0.5, 0.01 * T ** -0.5)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.slope_se > 0


def test_g_profile_and_ratio():
    assert g_profile(1.0, 1.0) == 0.0
    assert g_profile(1.0, 4.0) / g_profile(1.0, 16.0) == pytest.approx(2 / 3)


def test_variance_profile_on_synthetic_process():
    # independent-increment Gaussian process with variance g(tau)
    n, s2 = 20_000, 0.3
    z1, z2 = rng.normals(1, 0, n), rng.normals(1, 1, n)
    g4, g16 = g_profile(s2, 4.0), g_profile(s2, 16.0)
    G = {1.0: np.zeros(n), 4.0: math.sqrt(g4) * z1, 16.0: math.sqrt(g4) * z1 + math.sqrt(g16 - g4) * z2}
    prof = variance_profile_check({4.0: G[4.0], 16.0: G[16.0]}, s2)
    assert abs(prof.rows[0].ratio - 1) < 0.05 and abs(prof.rows[1].ratio - 1) < 0.05
    assert abs(prof.rows[0].variance / prof.rows[1].variance / (2 / 3) - 1) < 0.2
    inc = prof.increment_cov
    assert abs(inc.estimate) < 3 * inc.stderr
    assert variance_profile_check({1.0: G[1.0], 4.0: G[4.0]}, s2).rows[0].variance == 0.0


def test_variance_profile_beta_zero_degenerate():
    prof = variance_profile_check({4.0: np.zeros(100), 16.0: np.zeros(100)}, 0.0)
    assert prof.increment_cov is None
    assert all(r.variance == 0 for r in prof.rows)


def test_chi2_ci_brackets_estimate():
    lo, hi = chi2_variance_ci(2.0, 500)
    assert lo < 2.0 < hi


def test_sample_cov_with_se():
    a = rng.normals(2, 0, 10_000)
    c = sample_cov_with_se(a, a)
    assert c.estimate == pytest.approx(np.var(a, ddof=1))


def test_replicate_variance_removes_noise():
    n, R = 20_000, 2
    truth = rng.normals(3, 0, n) * 0.5
    noise = rng.normals(3, 1, n * R).reshape(n, R) * 2.0
    est = replicate_variance(truth[:, None] + noise)
    assert abs(est.estimate - 0.25) < 3 * est.stderr
    assert est.diagnostics["raw_variance"] > 2.0
    with pytest.raises(ValueError):
        replicate_variance(np.zeros((5, 1)))
