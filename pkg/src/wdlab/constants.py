"""Closed-form and quadrature constants built on the kernel.

green_mass  E_0[int_0^inf V(sqrt2 W_s) ds]
beta0_bound (2 green_mass)^{-1/2}
sigma2      2/((d-2)(2pi)^{d/2}) int V(sqrt2 y) E_y[exp(beta^2 int_0^inf V(sqrt2 W_s) ds)] dy
c3          (d-2)/2 sigma2
c2          E[(sqrt2/|Z|)^{d-2}] = 1/Gamma(d/2)
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from . import rng
from .kernel import CovarianceKernel, eval_kernel, sphere_area
from .paths import Term, path_functionals, steps_for
from .stats import EstimateWithError, combined_z, estimate_from_samples

SQRT2 = math.sqrt(2.0)
DEFAULT_T_CUT = 200.0
DEFAULT_DT = 1.0 / 128
RADIAL_NODES = 64


class ConsistencyError(RuntimeError):
    """Two routes to the same constant disagree beyond their combined error."""


def _check_dim(d: int):
    if d < 3:
        raise ValueError(f"dimension must be >= 3 (transience), got {d}")


def green_function(z, d: int):
    """Newtonian potential G(z) = Gamma(d/2-1)/(2 pi^{d/2}) |z|^{2-d}."""
    return special.gamma(d / 2 - 1) / (2 * math.pi ** (d / 2)) * np.asarray(z, dtype=float) ** (2 - d)


def radial_measure(K: CovarianceKernel, nodes_per_cell: int = 2):
    """Radii and masses m_i with int V(|u|) f(|u|) du = sum m_i f(r_i).

    Gauss-Legendre inside each table cell, so the rule is exact for the
    piecewise-linear V times any polynomial of degree <= 2*nodes_per_cell-2
    in r once r^{d-1} is absorbed.
    """
    xg, wg = np.polynomial.legendre.leggauss(nodes_per_cell)
    edges = K.r
    a, b = edges[:-1, None], edges[1:, None]
    r = (0.5 * (b - a) * xg + 0.5 * (a + b)).ravel()
    w = (0.5 * (b - a) * wg).ravel()
    m = sphere_area(K.d) * w * r ** (K.d - 1) * eval_kernel(K, r)
    return r, m


def green_mass_from_measure(radii, masses, d: int) -> float:
    """E_0[int V(sqrt2 W)] for V given as a radial measure: 2^{-d/2} sum m_i G(r_i/sqrt2)."""
    _check_dim(d)
    radii = np.asarray(radii, dtype=float)
    return float(2.0 ** (-d / 2) * np.sum(np.asarray(masses) * green_function(radii / SQRT2, d)))


def green_mass(K: CovarianceKernel, d: int | None = None) -> float:
    """Occupation-density identity int V(sqrt2 z) G(z) dz by radial quadrature."""
    d = K.d if d is None else d
    _check_dim(d)
    r, m = radial_measure(K, nodes_per_cell=4)
    return green_mass_from_measure(r, m, d)


def occupation_tail(K: CovarianceKernel, T: float) -> float:
    """E_0[int_T^inf V(sqrt2 W_s) ds], exact for the tabulated V.

    int_T^inf rho(s, z) ds = (2pi)^{-d/2} (|z|^2/2)^{1-d/2} Gamma(d/2-1) P(d/2-1, |z|^2/2T)
    with P the regularized lower incomplete gamma function.
    """
    d = K.d
    r, m = radial_measure(K, nodes_per_cell=4)
    z2 = (r / SQRT2) ** 2
    a = d / 2 - 1
    f = (2 * math.pi) ** (-d / 2) * (z2 / 2) ** (-a) * special.gamma(a) * special.gammainc(a, z2 / (2 * T))
    return float(2.0 ** (-d / 2) * np.sum(m * f))


def laplacian_at_origin(K: CovarianceKernel) -> float:
    """Delta V(0) = d V''(0) from a least-squares even fit to the first table points."""
    r = K.r[:6]
    A = np.vstack([np.ones_like(r), r**2, r**4]).T
    coef, *_ = np.linalg.lstsq(A, K.values[:6], rcond=None)
    return float(K.d * 2.0 * coef[1])


def green_mass_mc(K: CovarianceKernel, N: int = 200_000, T_cut: float = DEFAULT_T_CUT,
                  dt: float = DEFAULT_DT, seed: int = 0, threads: int | None = None) -> EstimateWithError:
    """MC of int_0^{T_cut} V(sqrt2 W) plus the exact expected remainder beyond T_cut.

    f(t) = E_0 V(sqrt2 W_t) has f'(0) = Delta V(0), so the trapezoid rule
    overshoots the mean by dt^2/12 |f'(0)| to leading order; that endpoint
    term is removed.
    """
    n = steps_for(T_cut, dt)
    b = path_functionals(K, N, n, dt, [Term(0, -1, SQRT2)], np.zeros((1, K.d)), seed=seed,
                         stream=0x6EE, threads=threads)
    tail = occupation_tail(K, T_cut)
    endpoint = dt * dt / 12.0 * laplacian_at_origin(K)
    e = estimate_from_samples(b.integrals[:, -1, 0])
    return EstimateWithError(e.estimate + tail + endpoint, e.stderr, e.n,
                             {"truncated_mean": e.estimate, "tail": tail, "endpoint_correction": endpoint,
                              "T_cut": T_cut, "dt": dt})


def beta0_bound(gmass: float) -> float:
    """Largest beta with 2 beta^2 green_mass < 1 holding strictly below it."""
    if gmass <= 0:
        raise ValueError("green_mass must be positive")
    return (2.0 * gmass) ** -0.5


def c2_constant(d: int) -> float:
    """E[(sqrt2/|Z|)^{d-2}] for standard Gaussian Z in R^d, equal to 1/Gamma(d/2)."""
    _check_dim(d)
    return 1.0 / special.gamma(d / 2)


def c2_mc(d: int, N: int = 1_000_000, seed: int = 0) -> EstimateWithError:
    _check_dim(d)
    Z = rng.normals(seed, 0xC2, N * d).reshape(N, d)
    r = np.linalg.norm(Z, axis=1)
    return estimate_from_samples((SQRT2 / r) ** (d - 2))


def rate_constant(d: int) -> float:
    """Limit of T^{(d-2)/2} E|sqrt2 W_T|^{2-d}, i.e. E|sqrt2 Z|^{2-d} = 2^{2-d}/Gamma(d/2)."""
    _check_dim(d)
    return 2.0 ** (2 - d) / special.gamma(d / 2)


def sigma2_closed_form_beta0(d: int) -> float:
    """sigma^2 at beta = 0: 2^{1-d/2}/((d-2)(2 pi)^{d/2})."""
    _check_dim(d)
    return 2.0 ** (1 - d / 2) / ((d - 2) * (2 * math.pi) ** (d / 2))


@dataclass(frozen=True)
class Sigma2Result:
    sigma2: float
    sigma2_se: float
    c3: float
    c3_se: float
    c3_direct: float
    c3_direct_se: float
    meta: dict = field(default_factory=dict)

    @property
    def routes_z(self) -> float:
        return combined_z(EstimateWithError(self.c3, self.c3_se, 0),
                          EstimateWithError(self.c3_direct, self.c3_direct_se, 0))


def _inner_expectation(K, beta, starts, N, T_cut, dt, seed, stream, threads):
    """E_y[exp(beta^2 int_0^{T_cut} V(sqrt2 W))] by MC, one estimate per start."""
    if beta == 0.0:
        return np.ones(len(starts)), np.zeros(len(starts))
    n = steps_for(T_cut, dt)
    means, ses = [], []
    for i, y in enumerate(starts):
        b = path_functionals(K, N, n, dt, [Term(0, -1, SQRT2)], y[None, :], seed=seed,
                             stream=stream + i, threads=threads)
        e = estimate_from_samples(np.exp(beta**2 * b.integrals[:, -1, 0]))
        means.append(e.estimate)
        ses.append(e.stderr)
    return np.array(means), np.array(ses)


def sigma2(beta: float, K: CovarianceKernel, N: int = 2000, T_cut: float = DEFAULT_T_CUT,
           dt: float = DEFAULT_DT, seed: int = 0, N_direct: int = 100_000, nodes: int = RADIAL_NODES,
           check: bool = True, threads: int | None = None) -> Sigma2Result:
    """sigma^2(beta) and C_3 by two independent routes.

    Route 1: Gauss-Legendre over |y| in [0, 1/sqrt2] with N inner paths per
    node.  Route 2: y uniform in the ball |y| <= 1/sqrt2, one path per y.
    Both truncate the time integral at T_cut.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    d = K.d
    _check_dim(d)
    R = 1.0 / SQRT2
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * R * (xg + 1.0)
    w = 0.5 * R * wg
    starts = np.zeros((nodes, d))
    starts[:, 0] = r
    inner, inner_se = _inner_expectation(K, beta, starts, N, T_cut, dt, seed, 0x5160, threads)
    pref = 2.0 / ((d - 2) * (2 * math.pi) ** (d / 2))
    wt = pref * sphere_area(d) * w * r ** (d - 1) * eval_kernel(K, SQRT2 * r)
    s2 = float(np.sum(wt * inner))
    s2_se = float(math.sqrt(np.sum((wt * inner_se) ** 2)))
    c3 = (d - 2) / 2 * s2
    c3_se = (d - 2) / 2 * s2_se

    # direct route
    y = rng.ball_points(seed, 0xC3D, N_direct, d, R)
    vol = math.pi ** (d / 2) / special.gamma(d / 2 + 1) * R**d
    vy = eval_kernel(K, SQRT2 * np.linalg.norm(y, axis=1))
    if beta == 0.0:
        ex = np.ones(N_direct)
    else:
        b = path_functionals(K, N_direct, steps_for(T_cut, dt), dt, [Term(0, -1, SQRT2)], y[:, None, :],
                             seed=seed, stream=0xC3E, threads=threads)
        ex = np.exp(beta**2 * b.integrals[:, -1, 0])
    direct = estimate_from_samples((2 * math.pi) ** (-d / 2) * vol * vy * ex)
    meta = {"N_inner": N, "N_direct": N_direct, "nodes": nodes, "T_cut": T_cut, "dt": dt, "seed": seed,
            "tail_bound": K.V0 / math.sqrt(T_cut)}
    res = Sigma2Result(s2, s2_se, c3, c3_se, direct.estimate, direct.stderr, meta)
    if check and abs(res.routes_z) > 3.0:
        raise ConsistencyError(f"C3 routes disagree: {c3} +- {c3_se} vs {direct.estimate} +- {direct.stderr}")
    return res


@dataclass
class ConstantsBundle:
    d: int
    beta: float
    green_mass: float
    beta0_bound: float
    sigma2: float
    c3: float
    c2: float
    sigma2_se: float = 0.0
    c3_se: float = 0.0
    c1_hat: float | None = None
    c1_hat_se: float | None = None
    var_minf: float | None = None
    var_minf_se: float | None = None
    rate_constant: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ConstantsBundle":
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ConstantsBundle":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @property
    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def g(self, tau: float) -> float:
        """Limit variance profile in the beta^2-scaled normalization."""
        return self.beta**2 * self.sigma2 * (1.0 - tau ** (-(self.d - 2) / 2))


def build_constants(d: int = 3, beta: float | None = None, beta_fraction: float | None = 0.5,
                    K: CovarianceKernel | None = None, N: int = 2000, N_direct: int = 100_000,
                    T_cut: float = DEFAULT_T_CUT, dt: float = DEFAULT_DT, seed: int = 0,
                    threads: int | None = None) -> ConstantsBundle:
    """Compute the full bundle; beta given absolutely or as a fraction of the bound."""
    from .kernel import build_kernel

    K = build_kernel(d) if K is None else K
    gm = green_mass(K)
    b0 = beta0_bound(gm)
    if beta is None:
        if beta_fraction is None or not 0 < beta_fraction <= 1:
            raise ValueError("beta_fraction must lie in (0, 1]")
        beta = beta_fraction * b0
    s = sigma2(beta, K, N=N, T_cut=T_cut, dt=dt, seed=seed, N_direct=N_direct, check=False, threads=threads)
    meta = dict(s.meta)
    meta.update({"n_r": K.n_r, "V0": K.V0, "kernel_mass": K.mass, "beta_fraction": beta / b0,
                 "c3_direct": s.c3_direct, "c3_direct_se": s.c3_direct_se, "c3_routes_z": s.routes_z})
    return ConstantsBundle(d=d, beta=float(beta), green_mass=gm, beta0_bound=b0, sigma2=s.sigma2, c3=s.c3,
                           c2=c2_constant(d), sigma2_se=s.sigma2_se, c3_se=s.c3_se,
                           rate_constant=rate_constant(d), meta=meta)
