"""Discretized Brownian paths, bridges and kernel time-integrals.

Single paths (``sample_path``, ``sample_bridge``) are materialized as arrays
and integrated with numpy.  Large Monte Carlo batches go through
``path_functionals``, a numba engine that never stores paths: it advances a
group of paths together, accumulates trapezoid integrals of V over a list of
terms, and records the running integrals and positions at checkpoints.

Far from the support of V the engine takes a coarse Gaussian step over m grid
steps and keeps it only if a Brownian-bridge tail bound certifies that the
skipped fine path stays out of range with probability below exp(-kappa).
Otherwise the m fine steps are filled in by exact bridge sampling, so the
fine-grid law is unchanged either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import rng
from ._parallel import map_shards
from .kernel import CovarianceKernel, eval_kernel, interp_uniform

STRIDE_KAPPA = 40.0
# strides are proposed at this fraction of the current distance so the chord check rarely fails
STRIDE_MARGIN = 0.5
MAX_STRIDE = 1 << 16


@dataclass(frozen=True)
class DiscretePath:
    d: int
    x: np.ndarray
    dt: float
    n: int
    positions: np.ndarray = field(repr=False)
    kind: str = "free"
    y: np.ndarray | None = None

    @property
    def T(self) -> float:
        return self.n * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n + 1)


@dataclass(frozen=True)
class PathIntegralResult:
    value: float
    dt: float


@nb.njit(cache=True)
def _draw(k0, k1, c0, c1, c2, d, out):
    for b in range((d + 3) // 4):
        g = rng.normal4(np.uint32(c0), np.uint32(c1), np.uint32(c2), np.uint32(b), k0, k1)
        for j in range(4):
            if 4 * b + j < d:
                out[4 * b + j] = g[j]


@nb.njit(cache=True)
def _free_positions(k0, k1, x, dt, n):
    d = x.size
    pos = np.empty((n + 1, d))
    pos[0] = x
    z = np.empty(d)
    sd = math.sqrt(dt)
    for k in range(n):
        _draw(k0, k1, k, 0, 0, d, z)
        for j in range(d):
            pos[k + 1, j] = pos[k, j] + sd * z[j]
    return pos


@nb.njit(cache=True)
def _bridge_positions(k0, k1, x, y, dt, n):
    d = x.size
    pos = np.empty((n + 1, d))
    pos[0] = x
    z = np.empty(d)
    for k in range(n - 1):
        rem = n - k
        _draw(k0, k1, k, 0, 0, d, z)
        sd = math.sqrt(dt * (rem - 1) / rem)
        for j in range(d):
            pos[k + 1, j] = pos[k, j] + (y[j] - pos[k, j]) / rem + sd * z[j]
    pos[n] = y
    return pos


def _vec(x, d):
    v = np.zeros(d) if x is None else np.asarray(x, dtype=float).reshape(-1)
    if v.size != d:
        raise ValueError(f"expected a {d}-vector, got shape {np.shape(x)}")
    return v


def sample_path(seed: int, stream: int, d: int, x, dt: float, n: int) -> DiscretePath:
    """Brownian path from x on the grid k*dt, k = 0..n."""
    if dt <= 0 or n < 1:
        raise ValueError("need dt > 0 and n >= 1")
    x = _vec(x, d)
    k0, k1 = rng.derive_key(seed, rng.TAG_PATH, stream)
    pos = _free_positions(np.uint32(k0), np.uint32(k1), x, float(dt), int(n))
    return DiscretePath(d=d, x=x, dt=float(dt), n=int(n), positions=pos)


def steps_for(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt={dt} does not divide T={T}")
    return n


def sample_bridge(seed: int, stream: int, d: int, x, y, T: float, dt: float) -> DiscretePath:
    """Brownian bridge from x at time 0 to y at time T, sequential construction."""
    if T <= 0:
        raise ValueError("need T > 0")
    n = steps_for(T, dt)
    x, y = _vec(x, d), _vec(y, d)
    k0, k1 = rng.derive_key(seed, rng.TAG_BRIDGE, stream)
    pos = _bridge_positions(np.uint32(k0), np.uint32(k1), x, y, float(dt), n)
    return DiscretePath(d=d, x=x, dt=float(dt), n=n, positions=pos, kind="bridge", y=y)


def refine_path(path: DiscretePath, seed: int, stream: int = 0) -> DiscretePath:
    """Halve dt by bridge infill at midpoints; the original grid points are kept."""
    k0, k1 = rng.derive_key(seed, rng.TAG_BRIDGE, stream ^ 0x5EED)
    z = np.empty((path.n, path.d))
    for k in range(path.n):
        z[k] = rng._normals(np.uint32(k0), np.uint32(k1), np.uint32(k), np.uint32(1), path.d)
    p = path.positions
    mid = 0.5 * (p[:-1] + p[1:]) + math.sqrt(path.dt / 4.0) * z
    fine = np.empty((2 * path.n + 1, path.d))
    fine[0::2] = p
    fine[1::2] = mid
    return DiscretePath(d=path.d, x=path.x, dt=path.dt / 2, n=2 * path.n, positions=fine,
                        kind=path.kind, y=path.y)


def frozen_path(d: int, x, dt: float, n: int) -> DiscretePath:
    """Constant path at x; a test fixture."""
    x = _vec(x, d)
    return DiscretePath(d=d, x=x, dt=float(dt), n=int(n), positions=np.tile(x, (n + 1, 1)))


def path_kernel_integral(path: DiscretePath, K: CovarianceKernel, scale: float = math.sqrt(2.0)) -> PathIntegralResult:
    """Trapezoid rule for int_0^T V(scale * W_s) ds on the path grid."""
    if path.d != K.d:
        raise ValueError(f"path dimension {path.d} != kernel dimension {K.d}")
    v = eval_kernel(K, scale * np.linalg.norm(path.positions, axis=1))
    return PathIntegralResult(value=_trapezoid(v, path.dt), dt=path.dt)


def _trapezoid(v, dt) -> float:
    return float(dt * (np.sum(v) - 0.5 * (v[0] + v[-1])))


def pair_kernel_integral(path_i: DiscretePath, path_j: DiscretePath, K: CovarianceKernel) -> PathIntegralResult:
    """Trapezoid rule for int_0^T V(W^i_s - W^j_s) ds."""
    if path_i.positions.shape != path_j.positions.shape or path_i.dt != path_j.dt:
        raise ValueError("paths must share dimension and time grid")
    if path_i.d != K.d:
        raise ValueError(f"path dimension {path_i.d} != kernel dimension {K.d}")
    diff = path_i.positions - path_j.positions
    v = eval_kernel(K, np.linalg.norm(diff, axis=1))
    return PathIntegralResult(value=_trapezoid(v, path_i.dt), dt=path_i.dt)


# ---------------------------------------------------------------------------
# batch engine


@dataclass(frozen=True)
class Term:
    """V(scale * (W^i - W^j)) with j = -1 meaning the origin."""

    i: int
    j: int = -1
    scale: float = 1.0

    def coeffs(self, P: int) -> np.ndarray:
        row = np.zeros(P)
        row[self.i] += self.scale
        if self.j >= 0:
            row[self.j] -= self.scale
        return row


def term_matrix(terms, P: int) -> np.ndarray:
    """Stack terms into an (n_terms, P) matrix; each row c gives V(|sum_p c_p W^p|).

    Rows may be given directly as length-P coefficient sequences.
    """
    rows = [t.coeffs(P) if isinstance(t, Term) else np.asarray(t, dtype=float) for t in terms]
    C = np.vstack(rows).astype(float)
    if C.shape[1] != P:
        raise ValueError(f"term rows must have length {P}")
    return C


@nb.njit(inline="always")
def _term_dist(W, C, t, d):
    acc = 0.0
    for c in range(d):
        v = 0.0
        for p in range(W.shape[0]):
            v += C[t, p] * W[p, c]
        acc += v * v
    return math.sqrt(acc)


@nb.njit(inline="always")
def _chord_dist(A, B, C, t, d):
    aa = 0.0
    ab = 0.0
    bb = 0.0
    for c in range(d):
        a = 0.0
        b = 0.0
        for p in range(A.shape[0]):
            a += C[t, p] * A[p, c]
            b += C[t, p] * B[p, c]
        e = b - a
        aa += a * a
        ab += a * e
        bb += e * e
    u = 0.0
    if bb > 0.0:
        u = min(1.0, max(0.0, -ab / bb))
    return math.sqrt(max(aa + 2.0 * u * ab + u * u * bb, 0.0))


@nb.njit(inline="always")
def _term_values(W, C, table, n_cells, out, d):
    for t in range(C.shape[0]):
        r = _term_dist(W, C, t, d)
        out[t] = interp_uniform(table, n_cells, r) if r < 1.0 else 0.0


@nb.njit(inline="always")
def _accumulate(Wn, C, table, n_cells, dt, acc, vprev, d):
    """Trapezoid step: add dt/2 (V_old + V_new) and roll V_new into vprev."""
    for t in range(C.shape[0]):
        r = _term_dist(Wn, C, t, d)
        v = interp_uniform(table, n_cells, r) if r < 1.0 else 0.0
        acc[t] += 0.5 * dt * (vprev[t] + v)
        vprev[t] = v


@nb.njit(nogil=True, cache=True)
def _functional_kernel(k0, k1, id0, starts, ends, is_bridge, n_steps, dt, C,
                       table, n_cells, ck, kappa, max_stride, out_int, out_pos):
    S, P, d = starts.shape
    nt = C.shape[0]
    nck = ck.size
    W = np.empty((P, d))
    Wc = np.empty((P, d))
    z = np.empty(d)
    acc = np.zeros(nt)
    vprev = np.zeros(nt)
    # variance rate of each term's argument; bridges fluctuate no faster than free paths
    vrate = np.zeros(nt)
    for t in range(nt):
        for p in range(P):
            vrate[t] += C[t, p] * C[t, p]
    for s in range(S):
        sid = id0 + s
        ctr = 0
        W[:, :] = starts[s]
        acc[:] = 0.0
        _term_values(W, C, table, n_cells, vprev, d)
        k = 0
        c = 0
        while c < nck and ck[c] == 0:
            out_int[s, c, :] = acc
            out_pos[s, c] = W
            c += 1
        while k < n_steps:
            nxt = ck[c]
            m = 0
            if max_stride > 1:
                bound = 1e300
                for t in range(nt):
                    D = _term_dist(W, C, t, d) - 1.0
                    if D <= 0.0:
                        bound = 0.0
                        break
                    bound = min(bound, 2.0 * (STRIDE_MARGIN * D) ** 2 / (d * vrate[t] * kappa))
                mf = bound / dt
                m = int(min(mf, float(max_stride)))
                m = min(m, nxt - k)
            if m >= 2:
                for p in range(P):
                    _draw(k0, k1, sid, ctr, p, d, z)
                    if is_bridge[p]:
                        rem = n_steps - k
                        sd = math.sqrt(dt * m * (rem - m) / rem)
                        for q in range(d):
                            Wc[p, q] = W[p, q] + (ends[s, p, q] - W[p, q]) * m / rem + sd * z[q]
                    else:
                        sd = math.sqrt(dt * m)
                        for q in range(d):
                            Wc[p, q] = W[p, q] + sd * z[q]
                ctr += 1
                ok = True
                for t in range(nt):
                    D = _chord_dist(W, Wc, C, t, d) - 1.0
                    if D <= 0.0 or 2.0 * D * D < kappa * d * vrate[t] * m * dt:
                        ok = False
                        break
                if ok:
                    W[:, :] = Wc
                    vprev[:] = 0.0
                else:
                    for i in range(m):
                        r = m - i
                        if r == 1:
                            W[:, :] = Wc
                        else:
                            sd = math.sqrt(dt * (r - 1) / r)
                            for p in range(P):
                                _draw(k0, k1, sid, ctr, p, d, z)
                                for q in range(d):
                                    W[p, q] = W[p, q] + (Wc[p, q] - W[p, q]) / r + sd * z[q]
                            ctr += 1
                        _accumulate(W, C, table, n_cells, dt, acc, vprev, d)
                k += m
            else:
                for p in range(P):
                    _draw(k0, k1, sid, ctr, p, d, z)
                    if is_bridge[p]:
                        rem = n_steps - k
                        if rem == 1:
                            for q in range(d):
                                W[p, q] = ends[s, p, q]
                        else:
                            sd = math.sqrt(dt * (rem - 1) / rem)
                            for q in range(d):
                                W[p, q] = W[p, q] + (ends[s, p, q] - W[p, q]) / rem + sd * z[q]
                    else:
                        sd = math.sqrt(dt)
                        for q in range(d):
                            W[p, q] = W[p, q] + sd * z[q]
                ctr += 1
                _accumulate(W, C, table, n_cells, dt, acc, vprev, d)
                k += 1
            while c < nck and ck[c] == k:
                out_int[s, c, :] = acc
                out_pos[s, c] = W
                c += 1


@dataclass
class FunctionalBatch:
    """Integrals (S, n_checkpoints, n_terms) and positions (S, n_checkpoints, P, d)."""

    integrals: np.ndarray
    positions: np.ndarray
    checkpoints: np.ndarray
    dt: float


def path_functionals(K: CovarianceKernel, n_samples: int, n_steps: int, dt: float, terms,
                     starts, ends=None, bridge=None, checkpoints=None, seed: int = 0,
                     stream: int = 0, id0: int = 0, kappa: float = STRIDE_KAPPA,
                     max_stride: int = MAX_STRIDE, threads: int | None = None) -> FunctionalBatch:
    """Run P coupled paths per sample and integrate V over each term.

    starts, ends: arrays broadcastable to (n_samples, P, d); ends are used
    only for paths flagged in ``bridge``.  Sample i depends only on
    (seed, stream, id0 + i).  ``max_stride=1`` disables striding.
    """
    d = K.d
    starts = np.asarray(starts, dtype=float)
    if starts.ndim == 2:
        starts = np.broadcast_to(starts, (n_samples,) + starts.shape)
    P = starts.shape[1]
    if ends is None:
        ends = np.zeros((1, P, d))
    ends = np.asarray(ends, dtype=float)
    if ends.ndim == 2:
        ends = np.broadcast_to(ends, (n_samples,) + ends.shape)
    if ends.shape[0] != n_samples:
        ends = np.broadcast_to(ends, (n_samples,) + ends.shape[1:])
    bridge = np.zeros(P, dtype=np.bool_) if bridge is None else np.asarray(bridge, dtype=np.bool_)
    ck = np.array([n_steps] if checkpoints is None else sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if ck[-1] != n_steps:
        ck = np.append(ck[ck < n_steps], n_steps)
    C = term_matrix(terms, P)
    k0, k1 = rng.derive_key(seed, rng.TAG_PATH, stream)
    out_int = np.empty((n_samples, ck.size, C.shape[0]))
    out_pos = np.empty((n_samples, ck.size, P, d))

    def work(lo, hi):
        _functional_kernel(np.uint32(k0), np.uint32(k1), id0 + lo,
                           np.ascontiguousarray(starts[lo:hi]), np.ascontiguousarray(ends[lo:hi]),
                           bridge, int(n_steps), float(dt), C, K.values, K.n_r, ck,
                           float(kappa), int(max_stride), out_int[lo:hi], out_pos[lo:hi])

    map_shards(work, n_samples, threads=threads)
    return FunctionalBatch(integrals=out_int, positions=out_pos, checkpoints=ck, dt=float(dt))


def brownian_density(t, z, d: int):
    """Heat kernel rho(t, z) = (2 pi t)^{-d/2} exp(-|z|^2 / 2t); z has shape (..., d)."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    return (2.0 * math.pi * t) ** (-d / 2) * np.exp(-r2 / (2.0 * t))


def tail_occupation_bound(T_cut: float, V0: float, a: float = 1.0, c: float = 1.0) -> float:
    """Bound c * V0 / (a sqrt(T_cut)) on P[int_{T_cut}^inf V(sqrt2 W) > a]."""
    return c * V0 / (a * math.sqrt(T_cut))
