"""Mollifier and covariance kernel.

The mollifier is the standard bump

    phi(x) = c_d * exp(-1 / (1 - |2x|^2))   for |x| < 1/2,   0 otherwise,

with c_d fixed numerically so that phi has unit mass in R^d.  Its
autocorrelation V = phi * phi is tabulated radially on [0, 1] and evaluated by
linear interpolation.  Every constant downstream (beta0 bound, sigma^2, C_1,
C_3) is defined relative to this choice of phi.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import special

PHI_SUPPORT = 0.5
V_SUPPORT = 1.0
MIN_POINTS_PER_UNIT = 64


class ResolutionError(RuntimeError):
    """A quadrature did not converge at the requested resolution."""


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} in R^d."""
    return 2.0 * math.pi ** (d / 2) / special.gamma(d / 2)


def bump_profile(r):
    """Unnormalized radial bump exp(-1/(1-4r^2)) on [0, 1/2), zero beyond."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < PHI_SUPPORT
    out[inside] = np.exp(-1.0 / (1.0 - 4.0 * r[inside] ** 2))
    return out


def _gauss_legendre(n: int, a: float, b: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def radial_integral(f, d: int, a: float, b: float, n: int) -> float:
    """Integral of a radial function over the shell a <= |x| <= b in R^d."""
    r, w = _gauss_legendre(n, a, b)
    return float(sphere_area(d) * np.sum(w * r ** (d - 1) * f(r)))


@dataclass(frozen=True)
class MollifierSpec:
    d: int = 3
    n_r: int = 512
    profile: str = "bump"

    def __post_init__(self):
        if self.d < 3:
            raise ValueError(f"dimension must be >= 3, got {self.d}")
        if self.n_r < MIN_POINTS_PER_UNIT:
            raise ValueError(f"n_r must be >= {MIN_POINTS_PER_UNIT}, got {self.n_r}")
        if self.profile != "bump":
            raise ValueError(f"unknown mollifier profile {self.profile!r}")


@dataclass(frozen=True)
class MollifierTable:
    """Radial samples of phi on [0, 1/2] plus its normalizing constant."""

    d: int
    n_r: int
    r: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    norm_const: float
    mass: float

    def __call__(self, r):
        """Exact (non-interpolated) phi at radius r."""
        return self.norm_const * bump_profile(r)


@dataclass(frozen=True)
class CovarianceKernel:
    """Radial table of V = phi * phi on [0, 1]; V(r) = 0 for r >= 1."""

    d: int
    n_r: int
    r: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    V0: float
    mass: float
    phi_norm_const: float
    support: float = V_SUPPORT

    def __call__(self, r):
        return eval_kernel(self, r)


def build_mollifier(spec: MollifierSpec) -> MollifierTable:
    """Tabulate phi on [0, 1/2] with n_r points per unit radius.

    The normalizing constant comes from Gauss-Legendre quadrature at n_r
    nodes; the same integral at 2 n_r nodes must agree to 1e-12 relative or
    ResolutionError is raised.
    """
    d = spec.d
    m1 = radial_integral(bump_profile, d, 0.0, PHI_SUPPORT, spec.n_r)
    m2 = radial_integral(bump_profile, d, 0.0, PHI_SUPPORT, 2 * spec.n_r)
    if abs(m1 - m2) > 1e-12 * abs(m2):
        raise ResolutionError(f"mollifier mass not converged at n_r={spec.n_r}: {m1!r} vs {m2!r}")
    c = 1.0 / m2
    n_cells = spec.n_r // 2
    r = np.linspace(0.0, PHI_SUPPORT, n_cells + 1)
    vals = c * bump_profile(r)
    vals[-1] = 0.0
    mass = radial_integral(lambda s: c * bump_profile(s), d, 0.0, PHI_SUPPORT, 2 * spec.n_r)
    return MollifierTable(d=d, n_r=spec.n_r, r=r, values=vals, norm_const=c, mass=mass)


def self_convolve(phi: MollifierTable, d: int | None = None, nodes: int = 512) -> CovarianceKernel:
    """Radial table of V = phi * phi by a (distance, angle) quadrature.

    For |x| = r and y at radius s and polar angle theta from x,
    |x - y|^2 = r^2 + s^2 - 2 r s cos(theta), so

        V(r) = |S^{d-2}| int_0^{1/2} s^{d-1} phi(s)
               int_0^pi phi(|x - y|) sin^{d-2}(theta) dtheta ds.

    Both inner ranges are clipped to where the integrand is nonzero, which
    keeps Gauss-Legendre accurate near the edge of the support.
    """
    d = phi.d if d is None else d
    if d != phi.d:
        raise ValueError("mollifier table built for a different dimension")
    n_cells = phi.n_r
    r_grid = np.linspace(0.0, V_SUPPORT, n_cells + 1)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    V = _convolve_table(r_grid, xg, wg, phi.norm_const, d, sphere_area(d - 1))
    V[-1] = 0.0
    V = np.maximum(V, 0.0)
    mass = _simpson_radial(r_grid, V, d)
    return CovarianceKernel(d=d, n_r=phi.n_r, r=r_grid, values=V, V0=float(V[0]), mass=mass,
                            phi_norm_const=phi.norm_const)


@nb.njit(cache=True)
def _bump(c, r):
    if r >= PHI_SUPPORT:
        return 0.0
    return c * math.exp(-1.0 / (1.0 - 4.0 * r * r))


@nb.njit(cache=True)
def _convolve_table(r_grid, xg, wg, c, d, ring):
    n = xg.size
    V = np.zeros(r_grid.size)
    for i in range(r_grid.size - 1):
        r = r_grid[i]
        s_lo = max(0.0, r - PHI_SUPPORT)
        half = 0.5 * (PHI_SUPPORT - s_lo)
        acc = 0.0
        for a in range(n):
            s = half * xg[a] + 0.5 * (PHI_SUPPORT + s_lo)
            ps = _bump(c, s)
            if ps == 0.0:
                continue
            if r == 0.0:
                th_max = math.pi
            else:
                cm = (r * r + s * s - PHI_SUPPORT * PHI_SUPPORT) / (2.0 * r * s)
                th_max = math.acos(min(1.0, max(-1.0, cm)))
            inner = 0.0
            for b in range(n):
                th = 0.5 * th_max * (xg[b] + 1.0)
                dist2 = r * r + s * s - 2.0 * r * s * math.cos(th)
                dist = math.sqrt(max(dist2, 0.0))
                inner += wg[b] * math.sin(th) ** (d - 2) * _bump(c, dist)
            acc += half * wg[a] * s ** (d - 1) * ps * ring * 0.5 * th_max * inner
        V[i] = acc
    return V


def _simpson_radial(r: np.ndarray, f: np.ndarray, d: int) -> float:
    from scipy.integrate import simpson

    return float(sphere_area(d) * simpson(r ** (d - 1) * f, x=r))


@functools.lru_cache(maxsize=8)
def build_kernel(d: int = 3, n_r: int = 512, nodes: int = 512) -> CovarianceKernel:
    """Mollifier then self-convolution, cached per process."""
    return self_convolve(build_mollifier(MollifierSpec(d=d, n_r=n_r)), nodes=nodes)


def eval_kernel(K: CovarianceKernel, r):
    """Linear interpolation of the V table; exactly zero for r >= 1."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0) or np.any(np.isnan(r_arr)):
        raise ValueError("kernel radius must be nonnegative")
    out = np.interp(r_arr, K.r, K.values)
    out = np.where(r_arr >= K.support, 0.0, out)
    if np.ndim(r) == 0:
        return float(out)
    return out


@nb.njit(inline="always", cache=True)
def interp_uniform(table, n_cells, r):
    """Linear interpolation on the uniform [0, 1] grid used by the V table."""
    if r >= 1.0:
        return 0.0
    t = r * n_cells
    i = int(t)
    f = t - i
    return table[i] * (1.0 - f) + table[i + 1] * f
