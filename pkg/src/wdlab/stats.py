"""Accumulators, normality diagnostics, power-law fits and variance profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats as sps


@dataclass(frozen=True)
class EstimateWithError:
    estimate: float
    stderr: float
    n: int
    diagnostics: dict = field(default_factory=dict)

    def z(self, target: float = 0.0, extra_se: float = 0.0) -> float:
        """Standardized distance to target, optionally with an extra independent SE."""
        se = math.hypot(self.stderr, extra_se)
        if se == 0.0:
            return 0.0 if self.estimate == target else math.inf
        return (self.estimate - target) / se


def estimate_from_samples(x, **diagnostics) -> EstimateWithError:
    x = np.asarray(x, dtype=float)
    n = x.size
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return EstimateWithError(float(x.mean()), se, n, dict(diagnostics))


def combined_z(a: EstimateWithError, b: EstimateWithError) -> float:
    """(a - b) over the combined standard error of independent estimates."""
    se = math.hypot(a.stderr, b.stderr)
    if se == 0.0:
        return 0.0 if a.estimate == b.estimate else math.inf
    return (a.estimate - b.estimate) / se


@dataclass
class McAccumulator:
    """Power sums (n, sum x, ..., sum x^4); merge is exact field addition."""

    n: int = 0
    s1: float = 0.0
    s2: float = 0.0
    s3: float = 0.0
    s4: float = 0.0

    @classmethod
    def of(cls, x) -> "McAccumulator":
        x = np.asarray(x, dtype=float).ravel()
        return cls(int(x.size), float(np.sum(x)), float(np.sum(x**2)), float(np.sum(x**3)), float(np.sum(x**4)))

    def add(self, x) -> "McAccumulator":
        return accumulate_merge(self, McAccumulator.of(x))

    @property
    def mean(self) -> float:
        return self.s1 / self.n

    def central_moments(self) -> tuple[float, float, float]:
        """Population central moments m2, m3, m4."""
        n = self.n
        mu = self.s1 / n
        e2, e3, e4 = self.s2 / n, self.s3 / n, self.s4 / n
        m2 = e2 - mu * mu
        m3 = e3 - 3 * mu * e2 + 2 * mu**3
        m4 = e4 - 4 * mu * e3 + 6 * mu * mu * e2 - 3 * mu**4
        return max(m2, 0.0), m3, m4

    @property
    def variance(self) -> float:
        """Unbiased sample variance."""
        if self.n < 2:
            return math.nan
        return max(self.s2 - self.s1 * self.s1 / self.n, 0.0) / (self.n - 1)

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n)

    @property
    def skewness(self) -> float:
        m2, m3, _ = self.central_moments()
        return m3 / m2**1.5 if m2 > 0 else math.nan

    @property
    def excess_kurtosis(self) -> float:
        m2, _, m4 = self.central_moments()
        return m4 / (m2 * m2) - 3.0 if m2 > 0 else math.nan

    def estimate(self) -> EstimateWithError:
        return EstimateWithError(self.mean, self.stderr, self.n)


def accumulate_merge(a: McAccumulator, b: McAccumulator) -> McAccumulator:
    return McAccumulator(a.n + b.n, a.s1 + b.s1, a.s2 + b.s2, a.s3 + b.s3, a.s4 + b.s4)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov with the Stephens finite-n correction


def _stephens(n: int) -> float:
    rn = math.sqrt(n)
    return rn + 0.12 + 0.11 / rn


def ks_statistic(samples, cdf) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    F = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_pvalue(D: float, n: int) -> float:
    """Asymptotic Kolmogorov tail at the Stephens-scaled statistic."""
    return float(min(1.0, max(0.0, special.kolmogorov(D * _stephens(n)))))


def ks_critical(n: int, alpha: float) -> float:
    """Critical value of D at level alpha."""
    return float(special.kolmogi(alpha) / _stephens(n))


@dataclass(frozen=True)
class NormalityReport:
    n: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    ks_distance: float
    ks_pvalue: float
    sigma2_target: float
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


MIN_NORMALITY_SAMPLES = 100


def normality_report(samples, sigma2_target: float, max_skew: float = 0.2, max_exkurt: float = 0.5,
                     min_p: float = 0.01) -> NormalityReport:
    """Moment diagnostics and one-sample KS against N(0, sigma2_target)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_NORMALITY_SAMPLES:
        raise ValueError(f"need at least {MIN_NORMALITY_SAMPLES} samples, got {x.size}")
    acc = McAccumulator.of(x)
    var = acc.variance
    if var <= 0.0 or sigma2_target <= 0.0:
        checks = {"skew": False, "kurtosis": False, "ks": False}
        return NormalityReport(x.size, acc.mean, max(var, 0.0), math.nan, math.nan, math.nan, 0.0,
                               sigma2_target, checks)
    sd = math.sqrt(sigma2_target)
    D = ks_statistic(x, lambda t: sps.norm.cdf(t, scale=sd))
    p = ks_pvalue(D, x.size)
    sk, ku = acc.skewness, acc.excess_kurtosis
    checks = {"skew": abs(sk) < max_skew, "kurtosis": abs(ku) < max_exkurt, "ks": p > min_p}
    return NormalityReport(x.size, acc.mean, var, sk, ku, D, p, sigma2_target, checks)


# ---------------------------------------------------------------------------
# power laws and variance profiles


@dataclass(frozen=True)
class PowerFit:
    slope: float
    intercept: float
    residual: float
    slope_se: float = math.nan


def fit_power_slope(T, y, y_se=None) -> PowerFit:
    """Least squares on (log T, log y); weighted by y/y_se when errors are given."""
    T = np.asarray(T, dtype=float)
    y = np.asarray(y, dtype=float)
    if T.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(y <= 0) or np.any(T <= 0):
        raise ValueError("power fit needs positive T and y")
    lx, ly = np.log(T), np.log(y)
    if y_se is None:
        w = np.ones_like(lx)
    else:
        w = y / np.asarray(y_se, dtype=float)
    A = np.vstack([lx, np.ones_like(lx)]).T
    Aw = A * w[:, None]
    coef, *_ = np.linalg.lstsq(Aw, ly * w, rcond=None)
    res = ly - A @ coef
    resid = float(math.sqrt(np.mean(res**2)))
    slope_se = math.nan
    if y_se is not None:
        cov = np.linalg.inv(Aw.T @ Aw)
        slope_se = float(math.sqrt(cov[0, 0]))
    return PowerFit(float(coef[0]), float(coef[1]), resid, slope_se)


def g_profile(sigma2: float, tau, d: int = 3):
    """g(tau) = sigma^2 (1 - tau^{-(d-2)/2})."""
    return sigma2 * (1.0 - np.asarray(tau, dtype=float) ** (-(d - 2) / 2))


def chi2_variance_ci(var: float, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1.0 - level
    return (var * (n - 1) / sps.chi2.ppf(1 - a / 2, n - 1), var * (n - 1) / sps.chi2.ppf(a / 2, n - 1))


def sample_cov_with_se(a, b) -> EstimateWithError:
    """Sample covariance and the standard error of the mean centered product."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    prod = (a - a.mean()) * (b - b.mean())
    cov = float(prod.sum() / (n - 1))
    se = float(prod.std(ddof=1) / math.sqrt(n))
    return EstimateWithError(cov, se, n)


@dataclass(frozen=True)
class VarianceRow:
    tau: float
    n: int
    variance: float
    ci_low: float
    ci_high: float
    target: float

    @property
    def ratio(self) -> float:
        return self.variance / self.target if self.target > 0 else math.nan


@dataclass(frozen=True)
class VarianceProfile:
    rows: list
    increment_cov: EstimateWithError | None


def variance_profile_check(G_by_tau: dict, sigma2: float, d: int = 3) -> VarianceProfile:
    """Per-tau variance vs g(tau) plus Cov(G_{tau2} - G_{tau1}, G_{tau1})."""
    taus = sorted(G_by_tau)
    if len(taus) < 2:
        raise ValueError("need at least two tau values")
    rows = []
    for tau in taus:
        G = np.asarray(G_by_tau[tau], dtype=float)
        v = float(G.var(ddof=1))
        lo, hi = chi2_variance_ci(v, G.size)
        rows.append(VarianceRow(float(tau), G.size, v, lo, hi, float(g_profile(sigma2, tau, d))))
    g1 = np.asarray(G_by_tau[taus[0]], dtype=float)
    g2 = np.asarray(G_by_tau[taus[-1]], dtype=float)
    inc = None
    if np.any(g1 != 0) or np.any(g2 != 0):
        inc = sample_cov_with_se(g2 - g1, g1)
    return VarianceProfile(rows, inc)


def replicate_variance(reps) -> EstimateWithError:
    """Cross-group variance of group means, minus the mean within-group noise.

    reps has shape (n_groups, R).  With q_e = (m_e - m)^2 n/(n-1) - s_e^2/R the
    mean of q is unbiased for the variance of the underlying group value and
    its standard error follows from the spread of q.
    """
    reps = np.asarray(reps, dtype=float)
    n, R = reps.shape
    if n < 2 or R < 2:
        raise ValueError("need at least two groups with two replicates each")
    m = reps.mean(axis=1)
    within = reps.var(axis=1, ddof=1) / R
    q = (m - m.mean()) ** 2 * n / (n - 1) - within
    raw = float(m.var(ddof=1))
    return EstimateWithError(float(q.mean()), float(q.std(ddof=1) / math.sqrt(n)), n,
                             {"raw_variance": raw, "mean_within": float(within.mean())})
