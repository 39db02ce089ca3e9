"""Annealed quantities as Brownian expectations.

Averaging over the noise turns every moment of M_T into an exponential
functional of independent Brownian paths,

    E[M_T^n] = E^{(n)}[exp(beta^2 sum_{i<j} int_0^T V(W^i_s - W^j_s) ds)],

and the two-point function of M_inf into a single path started at x/sqrt2.
Endpoint-pinned integrands (E[L_T], E[L_T^2]) use importance sampling of the
terminal point over the support of V plus Brownian bridges.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import rng
from .constants import DEFAULT_DT, DEFAULT_T_CUT, SQRT2, green_function, radial_measure, rate_constant
from .kernel import CovarianceKernel, eval_kernel
from .paths import Term, brownian_density, path_functionals, steps_for
from .stats import EstimateWithError, estimate_from_samples

MIN_ESS = 50
LOOKUP_RADII = 32


@dataclass(frozen=True)
class MomentRequest:
    beta: float
    n: int
    T: float
    N: int
    dt: float = DEFAULT_DT
    seed: int = 0
    endpoint_is: bool = False

    def __post_init__(self):
        if self.n not in (1, 2, 4):
            raise ValueError("n must be 1, 2 or 4")
        if self.N < 100:
            raise ValueError("N must be at least 100")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


def _beta_flag(beta: float, beta0: float | None) -> dict:
    if beta0 is not None and beta >= beta0:
        warnings.warn(f"beta={beta} is not below the bound {beta0}", stacklevel=3)
        return {"above_beta0_bound": True}
    return {}


def ball_volume(d: int, R: float) -> float:
    return math.pi ** (d / 2) / special.gamma(d / 2 + 1) * R**d


def ess(w) -> float:
    """Kish effective sample size of nonnegative weights."""
    w = np.asarray(w, dtype=float)
    s2 = float(np.sum(w * w))
    return float(np.sum(w) ** 2 / s2) if s2 > 0 else 0.0


def annealed_moment(req: MomentRequest, K: CovarianceKernel, beta0: float | None = None,
                    threads: int | None = None) -> EstimateWithError:
    """E[M_T^n] via n independent paths from the origin."""
    diag = _beta_flag(req.beta, beta0)
    if req.n == 1:
        return EstimateWithError(1.0, 0.0, req.N, diag)
    P = req.n
    terms = [Term(i, j) for i in range(P) for j in range(i + 1, P)]
    b = path_functionals(K, req.N, steps_for(req.T, req.dt), req.dt, terms, np.zeros((P, K.d)),
                         seed=req.seed, stream=0xA000 + P, threads=threads)
    x = np.exp(req.beta**2 * b.integrals[:, -1, :].sum(axis=1))
    return estimate_from_samples(x, **diag)


def single_path_integrals(K: CovarianceKernel, T: float, N: int, dt: float, seed: int, start=None,
                          stream: int = 0xB000, checkpoints=None, threads: int | None = None):
    """int_0^t V(sqrt2 W_s) ds at each checkpoint plus positions, from start."""
    start = np.zeros(K.d) if start is None else np.asarray(start, dtype=float)
    n = steps_for(T, dt)
    ck = None if checkpoints is None else [steps_for(t, dt) for t in checkpoints]
    return path_functionals(K, N, n, dt, [Term(0, -1, SQRT2)], start[None, :], seed=seed, stream=stream,
                            checkpoints=ck, threads=threads)


def variance_MT(beta: float, T: float, N: int, K: CovarianceKernel, dt: float = DEFAULT_DT, seed: int = 0,
                threads: int | None = None) -> EstimateWithError:
    """Var(M_T) = E_0[exp(beta^2 int_0^T V(sqrt2 W)) - 1]."""
    if beta == 0.0:
        return EstimateWithError(0.0, 0.0, N)
    b = single_path_integrals(K, T, N, dt, seed, threads=threads)
    return estimate_from_samples(np.expm1(beta**2 * b.integrals[:, -1, 0]))


def c1_first_order(beta: float, d: int) -> float:
    """beta^2 E_{z/sqrt2}[int_0^inf V(sqrt2 W)] |z|^{d-2} for |z| >= 1.

    Outside the support Newton's theorem gives 2^{-d/2} G(z/sqrt2), which
    simplifies to G(1)/2 |z|^{2-d}.
    """
    return float(beta**2 * 0.5 * green_function(1.0, d))


def tail_completion(z_end, c1: float, d: int):
    """E[exp(beta^2 int_{T_cut}^inf ...) | sqrt2 W_{T_cut} = z] = 1 + Cov(z), scaling form.

    Inside the unit ball the scaling form is capped at its |z| = 1 value;
    at T_cut = 200 such endpoints have probability below 1e-4.
    """
    r = np.maximum(np.asarray(z_end, dtype=float), 1.0)
    return 1.0 + c1 * r ** (2 - d)


@dataclass(frozen=True)
class CovarianceSamples:
    """Raw per-path pieces of one covariance estimate, kept for refitting C_1."""

    x_norm: float
    exp_int: np.ndarray
    z_end: np.ndarray


def _covariance_samples(beta, x, N, K, T_cut, dt, seed, stream, threads) -> CovarianceSamples:
    x = np.asarray(x, dtype=float).reshape(-1)
    b = single_path_integrals(K, T_cut, N, dt, seed, start=x / SQRT2, stream=stream, threads=threads)
    z_end = SQRT2 * np.linalg.norm(b.positions[:, -1, 0, :], axis=1)
    return CovarianceSamples(float(np.linalg.norm(x)), np.exp(beta**2 * b.integrals[:, -1, 0]), z_end)


def _covariance_from_samples(cs: CovarianceSamples, c1: float | None, d: int) -> EstimateWithError:
    f = cs.exp_int if c1 is None else cs.exp_int * tail_completion(cs.z_end, c1, d)
    e = estimate_from_samples(f - 1.0)
    diag = {"completion_c1": c1}
    if cs.x_norm >= 1.0:
        s = cs.x_norm ** (d - 2)
        diag.update(rescaled=s * e.estimate, rescaled_se=s * e.stderr)
    return EstimateWithError(e.estimate, e.stderr, e.n, diag)


def covariance_Minf(beta: float, x, N: int, K: CovarianceKernel, T_cut: float = DEFAULT_T_CUT,
                    dt: float = DEFAULT_DT, seed: int = 0, c1_tail: float | None = None,
                    complete_tail: bool = True, stream: int = 0xC000,
                    threads: int | None = None) -> EstimateWithError:
    """Cov(M_inf(0), M_inf(x)) = E_{x/sqrt2}[exp(beta^2 int_0^inf V(sqrt2 W)) - 1].

    The horizon is cut at T_cut.  With ``complete_tail`` each path is
    finished by the exact conditional expectation of the remainder under the
    scaling form 1 + c1 |sqrt2 W_{T_cut}|^{2-d}; c1 defaults to its first-order
    value.  Without it this is the plain truncated estimator.
    """
    if beta == 0.0:
        return EstimateWithError(0.0, 0.0, N)
    cs = _covariance_samples(beta, x, N, K, T_cut, dt, seed, stream, threads)
    c1 = None
    if complete_tail:
        c1 = c1_first_order(beta, K.d) if c1_tail is None else c1_tail
    return _covariance_from_samples(cs, c1, K.d)


@dataclass(frozen=True)
class CovarianceProfile:
    radii: np.ndarray
    estimates: list
    c1_hat: float
    c1_hat_se: float
    max_pair_z: float


def fit_c1(estimates, radii, d: int) -> tuple[float, float]:
    """Inverse-variance weighted mean of |x|^{d-2} Cov over radii >= 1."""
    vals, ses = [], []
    for r, e in zip(radii, estimates):
        if r >= 1.0:
            s = r ** (d - 2)
            vals.append(s * e.estimate)
            ses.append(s * e.stderr)
    vals, ses = np.array(vals), np.array(ses)
    w = 1.0 / ses**2
    return float(np.sum(w * vals) / np.sum(w)), float(1.0 / math.sqrt(np.sum(w)))


def covariance_profile(beta: float, radii, N: int, K: CovarianceKernel, T_cut: float = DEFAULT_T_CUT,
                       dt: float = DEFAULT_DT, seed: int = 0, iterations: int = 3,
                       threads: int | None = None) -> CovarianceProfile:
    """Covariance at several |x| along e_1, with C_1 refitted into the tail completion."""
    d = K.d
    radii = np.asarray(radii, dtype=float)
    samples = []
    for i, r in enumerate(radii):
        x = np.zeros(d)
        x[0] = r
        samples.append(_covariance_samples(beta, x, N, K, T_cut, dt, seed, 0xC100 + i, threads))
    c1 = c1_first_order(beta, d)
    for _ in range(iterations):
        est = [_covariance_from_samples(cs, c1, d) for cs in samples]
        c1, c1_se = fit_c1(est, radii, d)
    est = [_covariance_from_samples(cs, c1, d) for cs in samples]
    c1, c1_se = fit_c1(est, radii, d)
    resc = [(e.diagnostics["rescaled"], e.diagnostics["rescaled_se"]) for e in est if "rescaled" in e.diagnostics]
    zmax = 0.0
    for i in range(len(resc)):
        for j in range(i + 1, len(resc)):
            zmax = max(zmax, abs(resc[i][0] - resc[j][0]) / math.hypot(resc[i][1], resc[j][1]))
    return CovarianceProfile(radii, est, c1, c1_se, zmax)


@dataclass(frozen=True)
class CovarianceLookup:
    """c(z): scaling form for |z| >= 1, interpolated MC estimates inside."""

    d: int
    c1: float
    radii: np.ndarray
    values: np.ndarray

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = self.c1 * np.maximum(z, 1.0) ** (2 - self.d)
        inside = z < 1.0
        out[inside] = np.interp(z[inside], self.radii, self.values)
        return out


def build_cov_lookup(beta: float, c1: float, N: int, K: CovarianceKernel, T_cut: float = DEFAULT_T_CUT,
                     dt: float = DEFAULT_DT, seed: int = 0, n_radii: int = LOOKUP_RADII,
                     threads: int | None = None) -> CovarianceLookup:
    radii = np.linspace(0.0, 1.0, n_radii)
    vals = []
    for i, r in enumerate(radii[:-1]):
        x = np.zeros(K.d)
        x[0] = r
        vals.append(covariance_Minf(beta, x, N, K, T_cut, dt, seed, c1_tail=c1, stream=0xC400 + i,
                                    threads=threads).estimate)
    vals.append(c1)
    return CovarianceLookup(K.d, c1, radii, np.array(vals))


def second_moment_Minf(beta: float, N: int, K: CovarianceKernel, T_cut: float = DEFAULT_T_CUT,
                       dt: float = DEFAULT_DT, seed: int = 0, c1_tail: float | None = None,
                       threads: int | None = None) -> EstimateWithError:
    """E[M_inf^2] = 1 + Cov at x = 0."""
    e = covariance_Minf(beta, np.zeros(K.d), N, K, T_cut, dt, seed, c1_tail=c1_tail, stream=0xC300,
                        threads=threads)
    return EstimateWithError(1.0 + e.estimate, e.stderr, e.n, e.diagnostics)


@dataclass(frozen=True)
class L2Curve:
    T: np.ndarray
    estimates: list

    @property
    def values(self) -> np.ndarray:
        return np.array([e.estimate for e in self.estimates])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])

    def rescaled(self, d: int = 3) -> tuple[np.ndarray, np.ndarray]:
        s = self.T ** ((d - 2) / 2)
        return s * self.values, s * self.stderrs


def l2_distance_curve(beta: float, T_list, N: int, K: CovarianceKernel, cov: CovarianceLookup,
                      dt: float = DEFAULT_DT, seed: int = 0, threads: int | None = None) -> L2Curve:
    """||M_inf - M_T||^2 = E_0[exp(beta^2 int_0^T V(sqrt2 W)) c(sqrt2 W_T)], one path set for all T."""
    T_list = np.sort(np.asarray(T_list, dtype=float))
    b = single_path_integrals(K, float(T_list[-1]), N, dt, seed, stream=0xD000, checkpoints=T_list,
                              threads=threads)
    out = []
    for i, T in enumerate(T_list):
        z = SQRT2 * np.linalg.norm(b.positions[:, i, 0, :], axis=1)
        e = estimate_from_samples(np.exp(beta**2 * b.integrals[:, i, 0]) * cov(z))
        s = T ** ((K.d - 2) / 2)
        out.append(EstimateWithError(e.estimate, e.stderr, e.n,
                                     {"T": float(T), "rescaled": s * e.estimate, "rescaled_se": s * e.stderr}))
    return L2Curve(T_list, out)


def l2_level_target(c1: float, c1_se: float, m2: EstimateWithError, d: int) -> EstimateWithError:
    """Limit of T^{(d-2)/2} ||M_inf - M_T||^2: C_1 E[M_inf^2] E|sqrt2 Z|^{2-d}."""
    k = rate_constant(d)
    val = c1 * m2.estimate * k
    se = k * math.hypot(c1_se * m2.estimate, c1 * m2.stderr)
    return EstimateWithError(val, se, m2.n)


# ---------------------------------------------------------------------------
# L_T


def endpoint_density_integral(T: float, K: CovarianceKernel) -> float:
    """T^{d/2} int rho(T, y) V(sqrt2 y) dy = T^{d/2} int rho(2T, u) V(u) du."""
    r, m = radial_measure(K, nodes_per_cell=4)
    d = K.d
    return float(T ** (d / 2) * np.sum(m * (4 * math.pi * T) ** (-d / 2) * np.exp(-r * r / (4 * T))))


def lt_first_term(beta: float, T: float, N: int, K: CovarianceKernel, dt: float = DEFAULT_DT, seed: int = 0,
                  endpoint_is: bool = True, threads: int | None = None) -> EstimateWithError:
    """E_0[exp(beta^2 int_0^T V(sqrt2 W)) T^{d/2} V(sqrt2 W_T)]."""
    d = K.d
    n = steps_for(T, dt)
    if endpoint_is:
        R = 1.0 / SQRT2
        y = rng.ball_points(seed, 0xE001, N, d, R)
        w = ball_volume(d, R) * T ** (d / 2) * brownian_density(T, y, d) * eval_kernel(K, SQRT2 * np.linalg.norm(y, axis=1))
        if beta == 0.0:
            vals = w
        else:
            b = path_functionals(K, N, n, dt, [Term(0, -1, SQRT2)], np.zeros((1, d)), ends=y[:, None, :],
                                 bridge=[True], seed=seed, stream=0xE002, threads=threads)
            vals = w * np.exp(beta**2 * b.integrals[:, -1, 0])
        return estimate_from_samples(vals, ess=ess(vals))
    b = single_path_integrals(K, T, N, dt, seed, stream=0xE003, threads=threads)
    yT = b.positions[:, -1, 0, :]
    vals = np.exp(beta**2 * b.integrals[:, -1, 0]) * T ** (d / 2) * eval_kernel(K, SQRT2 * np.linalg.norm(yT, axis=1))
    return estimate_from_samples(vals, ess=ess(vals))


def expected_LT(beta: float, T: float, c3: float, N: int, K: CovarianceKernel, dt: float = DEFAULT_DT,
                seed: int = 0, c3_se: float = 0.0, endpoint_is: bool = True,
                threads: int | None = None) -> EstimateWithError:
    """E[L_T] = first term - C_3 E_0[exp(beta^2 int_0^T V(sqrt2 W))]."""
    A = lt_first_term(beta, T, N, K, dt, seed, endpoint_is, threads)
    if beta == 0.0:
        B = EstimateWithError(1.0, 0.0, N)
    else:
        b = single_path_integrals(K, T, N, dt, seed, stream=0xE004, threads=threads)
        B = estimate_from_samples(np.exp(beta**2 * b.integrals[:, -1, 0]))
    est = A.estimate - c3 * B.estimate
    se = math.sqrt(A.stderr**2 + (c3 * B.stderr) ** 2 + (c3_se * B.estimate) ** 2)
    diag = {"first_term": A.estimate, "first_term_se": A.stderr, "exp_mean": B.estimate, "exp_mean_se": B.stderr,
            "ess": A.diagnostics.get("ess"), "c3": c3}
    return EstimateWithError(est, se, N, diag)


def _pair_terms():
    """Six pair terms for W^1..W^4 written in the (X12, Y12, X34, Y34) coordinates.

    W^1 = (Y12 + X12)/sqrt2, W^2 = (Y12 - X12)/sqrt2, likewise for 3, 4.
    """
    h = 1.0 / SQRT2
    return [
        [SQRT2, 0, 0, 0],            # W1 - W2
        [0, 0, SQRT2, 0],            # W3 - W4
        [h, h, -h, -h],              # W1 - W3
        [h, h, h, -h],               # W1 - W4
        [-h, h, -h, -h],             # W2 - W3
        [-h, h, h, -h],              # W2 - W4
    ]


def second_moment_LT(beta: float, T: float, c3: float, N: int, K: CovarianceKernel, dt: float = DEFAULT_DT,
                     seed: int = 0, threads: int | None = None) -> EstimateWithError:
    """E[L_T^2] from four paths, expanded as T_AA - 2 C_3 T_A + C_3^2 T_0.

    X12 = (W1 - W2)/sqrt2 and Y12 = (W1 + W2)/sqrt2 are independent standard
    Brownian motions; importance sampling draws u = W1_T - W2_T uniformly in
    the unit ball and pins X12 to u/sqrt2 with a bridge.  Same for (3, 4).
    """
    d = K.d
    n = steps_for(T, dt)
    vol = ball_volume(d, 1.0)
    u12 = rng.ball_points(seed, 0xF001, N, d, 1.0)
    u34 = rng.ball_points(seed, 0xF002, N, d, 1.0)

    def weight(u):
        return vol * T ** (d / 2) * brownian_density(2 * T, u, d) * eval_kernel(K, np.linalg.norm(u, axis=1))

    w12, w34 = weight(u12), weight(u34)
    ends = np.zeros((N, 4, d))
    ends[:, 0] = u12 / SQRT2
    ends[:, 2] = u34 / SQRT2
    terms = _pair_terms()
    starts = np.zeros((4, d))

    def run(bridge, stream):
        if beta == 0.0:
            return np.ones(N)
        b = path_functionals(K, N, n, dt, terms, starts, ends=ends, bridge=bridge, seed=seed, stream=stream,
                             threads=threads)
        return np.exp(beta**2 * b.integrals[:, -1, :].sum(axis=1))

    t_aa = w12 * w34 * run([True, False, True, False], 0xF010)
    t_a = w12 * run([True, False, False, False], 0xF011)
    t_0 = run([False, False, False, False], 0xF012)
    vals = t_aa - 2 * c3 * t_a + c3 * c3 * t_0
    e = estimate_from_samples(vals)
    diag = {"T_AA": float(t_aa.mean()), "T_A": float(t_a.mean()), "T_0": float(t_0.mean()),
            "ess": ess(np.abs(t_aa))}
    if diag["ess"] < MIN_ESS:
        diag["unreliable"] = True
    return EstimateWithError(e.estimate, e.stderr, e.n, diag)


def second_moment_LT_beta0(T: float, c3: float, K: CovarianceKernel) -> float:
    """Quadrature value at beta = 0: (a(T) - C_3)^2 with a(T) the endpoint density integral."""
    a = endpoint_density_integral(T, K)
    return (a - c3) ** 2
