"""Discretized space-time white noise and quenched Feynman-Kac estimates.

The noise is a piecewise-constant field on space cells of side h (centres
n*h, n in Z^d) and time slabs of length delta.  Cell (k, n) carries an
independent N(0, delta h^d) variable generated on demand from a Philox
counter (by normal inversion of one word), so a realization is never stored.  Along a path sampled at the left
points W_{k delta}, k = 0..K-1,

    S = sum_k sum_n phi(W_{k delta} - n h) xi_{k,n},
    Var(S | W) = delta h^d sum_k sum_n phi(W_{k delta} - n h)^2,

and the weight exp(beta S - beta^2 Var/2) has mean exactly one over the
noise.  Two paths then see the effective kernel
V_eff(x, y) = h^d sum_n phi(x - n h) phi(y - n h).

M_T is estimated by a particle system (sequential importance resampling):
weights accumulate over blocks of steps and particles are resampled
systematically on a fixed schedule.  The running product of mean weights is
an unbiased estimate of M_T for any schedule.  Independent replicates per
environment give within-environment error bars and unbiased products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from . import rng
from ._parallel import map_shards
from .kernel import CovarianceKernel, eval_kernel
from .paths import DiscretePath, steps_for

PHI_R2_MAX = 0.25
DEFAULT_H = 0.25
DEFAULT_DELTA = 1.0 / 32
DEFAULT_REPLICATES = 2
# resample about every 0.5 / (beta^2 V0 delta) steps: log-weight variance ~0.5 per block
RESAMPLE_LOGVAR = 0.5
MIN_PAIR_ESS = 50.0


def env_seed(master_seed: int, env_id: int) -> int:
    """64-bit seed of environment env_id under a master seed."""
    k0, k1 = rng.derive_key(master_seed, rng.TAG_NOISE, env_id)
    return (k1 << 32) | k0


@dataclass(frozen=True)
class EnvironmentHandle:
    seed: int
    d: int = 3
    h: float = DEFAULT_H
    delta: float = DEFAULT_DELTA
    beta: float = 0.0
    T_max: float = 1024.0
    phi_const: float = 18.136933916866823

    def __post_init__(self):
        if self.h > 0.5:
            raise ValueError("cell size h must be at most 1/2")
        if self.d not in (3, 4):
            raise ValueError("noise field is implemented for d = 3 and d = 4")

    @classmethod
    def create(cls, master_seed: int, env_id: int, K: CovarianceKernel, **kw) -> "EnvironmentHandle":
        return cls(seed=env_seed(master_seed, env_id), d=K.d, phi_const=K.phi_norm_const, **kw)

    @property
    def key(self) -> tuple[int, int]:
        return self.seed & 0xFFFFFFFF, (self.seed >> 32) & 0xFFFFFFFF

    @property
    def cell_sd(self) -> float:
        return math.sqrt(self.delta * self.h**self.d)

    def steps(self, T: float) -> int:
        if T > self.T_max:
            raise ValueError(f"horizon {T} exceeds capacity {self.T_max}")
        return steps_for(T, self.delta)


# ---------------------------------------------------------------------------
# noise field


_OFF = np.uint32(rng.COORD_OFFSET)
# fast-math without the no-NaN/no-Inf assumptions
_FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}


@nb.njit(inline="always")
def _cell_words(k, a, b, c, last_blk, k0, k1, d):
    """Philox words for lanes 0..3 of the block containing the cell; the step k enters the key."""
    kk = np.uint32(k1 ^ np.uint32(k))
    if d == 3:
        return rng.philox4x32(np.uint32(a + _OFF), np.uint32(b + _OFF), np.uint32(last_blk + _OFF),
                              np.uint32(0), k0, kk)
    return rng.philox4x32(np.uint32(a + _OFF), np.uint32(b + _OFF), np.uint32(c + _OFF),
                          np.uint32(last_blk + _OFF), k0, kk)


@nb.njit(inline="always")
def _lane(w0, w1, w2, w3, lane):
    r = w0 if lane == 0 else (w1 if lane == 1 else (w2 if lane == 2 else w3))
    return rng.word_normal(r)


@nb.njit(cache=True)
def _noise_value(k, n, k0, k1, sd):
    d = n.size
    last = n[d - 1]
    c = n[2] if d == 4 else 0
    w0, w1, w2, w3 = _cell_words(k, n[0], n[1], c, last >> 2, np.uint32(k0), np.uint32(k1), d)
    return sd * _lane(w0, w1, w2, w3, last & 3)


def noise_increment(env: EnvironmentHandle, k: int, cell) -> float:
    """xi_{k, n}: N(0, delta h^d), a pure function of (seed, k, n)."""
    n = np.asarray(cell, dtype=np.int64)
    if n.size != env.d:
        raise ValueError(f"cell must have {env.d} integer coordinates")
    k0, k1 = env.key
    return float(_noise_value(int(k), n, k0, k1, env.cell_sd))


@nb.njit(inline="always")
def _phi(c, r2):
    if r2 >= PHI_R2_MAX:
        return 0.0
    return c * math.exp(-1.0 / (1.0 - 4.0 * r2))


@nb.njit(inline="always")
def _field3(x0, x1, x2, k, h, k0, k1, pc):
    """(sum_n phi(x - nh) g_n, sum_n phi(x - nh)^2) with g standard normal, d = 3."""
    s = 0.0
    v = 0.0
    a0 = int(math.ceil((x0 - 0.5) / h))
    b0 = int(math.floor((x0 + 0.5) / h))
    for n0 in range(a0, b0 + 1):
        dx = x0 - n0 * h
        r0 = dx * dx
        if r0 >= PHI_R2_MAX:
            continue
        rr = math.sqrt(PHI_R2_MAX - r0)
        a1 = int(math.ceil((x1 - rr) / h))
        b1 = int(math.floor((x1 + rr) / h))
        for n1 in range(a1, b1 + 1):
            dy = x1 - n1 * h
            r1 = r0 + dy * dy
            if r1 >= PHI_R2_MAX:
                continue
            rz = math.sqrt(PHI_R2_MAX - r1)
            a2 = int(math.ceil((x2 - rz) / h))
            b2 = int(math.floor((x2 + rz) / h))
            blk = a2 >> 2
            w0, w1, w2, w3 = _cell_words(k, n0, n1, 0, blk, k0, k1, 3)
            for n2 in range(a2, b2 + 1):
                dz = x2 - n2 * h
                f = _phi(pc, r1 + dz * dz)
                if f == 0.0:
                    continue
                if (n2 >> 2) != blk:
                    blk = n2 >> 2
                    w0, w1, w2, w3 = _cell_words(k, n0, n1, 0, blk, k0, k1, 3)
                s += f * _lane(w0, w1, w2, w3, n2 & 3)
                v += f * f
    return s, v


@nb.njit(inline="always")
def _field4(x, k, h, k0, k1, pc):
    s = 0.0
    v = 0.0
    for n0 in range(int(math.ceil((x[0] - 0.5) / h)), int(math.floor((x[0] + 0.5) / h)) + 1):
        r0 = (x[0] - n0 * h) ** 2
        if r0 >= PHI_R2_MAX:
            continue
        ra = math.sqrt(PHI_R2_MAX - r0)
        for n1 in range(int(math.ceil((x[1] - ra) / h)), int(math.floor((x[1] + ra) / h)) + 1):
            r1 = r0 + (x[1] - n1 * h) ** 2
            if r1 >= PHI_R2_MAX:
                continue
            rb = math.sqrt(PHI_R2_MAX - r1)
            for n2 in range(int(math.ceil((x[2] - rb) / h)), int(math.floor((x[2] + rb) / h)) + 1):
                r2 = r1 + (x[2] - n2 * h) ** 2
                if r2 >= PHI_R2_MAX:
                    continue
                rc = math.sqrt(PHI_R2_MAX - r2)
                for n3 in range(int(math.ceil((x[3] - rc) / h)), int(math.floor((x[3] + rc) / h)) + 1):
                    f = _phi(pc, r2 + (x[3] - n3 * h) ** 2)
                    if f == 0.0:
                        continue
                    w0, w1, w2, w3 = _cell_words(k, n0, n1, n2, n3 >> 2, k0, k1, 4)
                    s += f * _lane(w0, w1, w2, w3, n3 & 3)
                    v += f * f
    return s, v


@nb.njit(inline="always")
def _field(X, i, k, h, k0, k1, pc, d):
    if d == 3:
        return _field3(X[i, 0], X[i, 1], X[i, 2], k, h, k0, k1, pc)
    return _field4(X[i], k, h, k0, k1, pc)


@nb.njit(cache=True)
def _path_log_weight(X, k_lo, k_hi, h, sd, beta, k0, k1, pc):
    """beta S - beta^2 Var/2 over steps k_lo..k_hi-1, positions X[k]."""
    d = X.shape[1]
    S = 0.0
    Var = 0.0
    for k in range(k_lo, k_hi):
        s, v = _field(X, k, k, h, k0, k1, pc, d)
        S += s
        Var += v
    S *= sd
    Var *= sd * sd
    return beta * S - 0.5 * beta * beta * Var, S, Var


def quenched_log_weight(env: EnvironmentHandle, path: DiscretePath, T: float | None = None,
                        T_start: float = 0.0, beta: float | None = None) -> tuple[float, float, float]:
    """(log Phi, S, Var) for the time window [T_start, T) of a path."""
    beta = env.beta if beta is None else beta
    if abs(path.dt - env.delta) > 1e-15:
        raise ValueError("path dt must equal the environment time step")
    T = path.T if T is None else T
    k_hi = steps_for(T, env.delta)
    k_lo = 0 if T_start == 0 else steps_for(T_start, env.delta)
    if k_hi > path.n:
        raise ValueError("path horizon shorter than T")
    k0, k1 = env.key
    lw, S, Var = _path_log_weight(path.positions, k_lo, k_hi, env.h, env.cell_sd, float(beta),
                                  np.uint32(k0), np.uint32(k1), env.phi_const)
    return float(lw), float(S), float(Var)


def quenched_weight(env: EnvironmentHandle, path: DiscretePath, T: float | None = None,
                    beta: float | None = None) -> float:
    """Phi_T(W) = exp(beta S - beta^2 Var(S)/2) in the discrete model."""
    return math.exp(quenched_log_weight(env, path, T, beta=beta)[0])


# ---------------------------------------------------------------------------
# particle system


@nb.njit(nogil=True, cache=True, fastmath=_FAST)
def _smc(ek0, ek1, pk0, pk1, N, d, ck, delta, h, beta, every, pc, out_logz, out_pos, out_lw, snap):
    K = ck[-1]
    X = np.zeros((N, d))
    Xn = np.empty((N, d))
    lw = np.zeros(N)
    w = np.empty(N)
    logz = 0.0
    sd = math.sqrt(delta * h**d)
    a = beta * sd
    b = 0.5 * beta * beta * sd * sd
    sq = math.sqrt(delta)
    c = 0
    for k in range(K):
        for i in range(N):
            if beta != 0.0:
                s, v = _field(X, i, k, h, ek0, ek1, pc, d)
                lw[i] += a * s - b * v
            for blk in range((d + 3) // 4):
                z = rng.normal4(np.uint32(i), np.uint32(k), np.uint32(blk), np.uint32(0), pk0, pk1)
                for q in range(4):
                    if 4 * blk + q < d:
                        X[i, 4 * blk + q] += sq * z[q]
        m = lw.max()
        if k + 1 == ck[c]:
            tot = 0.0
            for i in range(N):
                tot += math.exp(lw[i] - m)
            out_logz[c] = logz + m + math.log(tot / N)
            if snap:
                out_pos[c] = X
                out_lw[c] = lw - m
            c += 1
            if c == ck.size:
                break
        if every > 0 and (k + 1) % every == 0:
            tot = 0.0
            for i in range(N):
                w[i] = math.exp(lw[i] - m)
                tot += w[i]
            logz += m + math.log(tot / N)
            r = rng.philox4x32(np.uint32(k), np.uint32(0xFFFFFFFF), np.uint32(1), np.uint32(0), pk0, pk1)
            step = tot / N
            t = rng.to_unit(r[0]) * step
            acc = 0.0
            j = 0
            for i in range(N):
                acc += w[i]
                while j < N and t < acc:
                    Xn[j] = X[i]
                    j += 1
                    t += step
            while j < N:
                Xn[j] = X[N - 1]
                j += 1
            X[:, :] = Xn
            lw[:] = 0.0


def resample_interval(beta: float, V0: float, delta: float) -> int:
    """Steps between resampling so each block adds ~RESAMPLE_LOGVAR of log-weight variance."""
    if beta == 0.0:
        return 0
    return max(1, int(round(RESAMPLE_LOGVAR / (beta * beta * V0 * delta))))


@dataclass
class QuenchedEstimate:
    """Coupled estimates of M_T at several horizons for one environment."""

    horizons: np.ndarray
    replicates: np.ndarray  # (R, n_horizons) per-replicate estimates of M_T
    n_paths: int
    env_seed: int
    positions: np.ndarray | None = field(default=None, repr=False)  # (R, n_h, N, d)
    log_weights: np.ndarray | None = field(default=None, repr=False)  # (R, n_h, N)

    @property
    def M(self) -> np.ndarray:
        return self.replicates.mean(axis=0)

    @property
    def se_within(self) -> np.ndarray:
        R = self.replicates.shape[0]
        if R < 2:
            return np.full(self.horizons.size, np.nan)
        return self.replicates.std(axis=0, ddof=1) / math.sqrt(R)


def estimate_partition(env: EnvironmentHandle, beta: float, horizons, N_paths: int,
                       replicates: int = DEFAULT_REPLICATES, resample_every: int | str | None = "auto",
                       V0: float = 3.95, keep_particles: bool = False) -> QuenchedEstimate:
    """M_T for every horizon from one particle run per replicate.

    resample_every: steps between resampling, "auto" for the default
    schedule, or None for plain Monte Carlo (independent paths).
    """
    hs = np.asarray(horizons, dtype=float)
    if np.any(np.diff(hs) <= 0):
        raise ValueError("horizons must be strictly increasing")
    ck = np.array([env.steps(T) for T in hs], dtype=np.int64)
    if resample_every == "auto":
        every = resample_interval(beta, V0, env.delta)
    elif resample_every is None:
        every = 0
    else:
        every = int(resample_every)
    ek0, ek1 = env.key
    d = env.d
    reps = np.empty((replicates, hs.size))
    pos = np.empty((replicates, hs.size, N_paths, d)) if keep_particles else None
    lws = np.empty((replicates, hs.size, N_paths)) if keep_particles else None
    for r in range(replicates):
        pk0, pk1 = rng.derive_key(env.seed, rng.TAG_PATH, r)
        out_logz = np.empty(hs.size)
        op = pos[r] if keep_particles else np.empty((hs.size, 1, d))
        ol = lws[r] if keep_particles else np.empty((hs.size, 1))
        _smc(np.uint32(ek0), np.uint32(ek1), np.uint32(pk0), np.uint32(pk1), int(N_paths), d, ck,
             env.delta, env.h, float(beta), every, env.phi_const, out_logz, op, ol, keep_particles)
        reps[r] = np.exp(out_logz)
    return QuenchedEstimate(hs, reps, N_paths, env.seed, pos, lws)


# ---------------------------------------------------------------------------
# matched-kernel annealed oracle


@nb.njit(inline="always")
def _veff3(x, y, h, pc):
    """V_eff(x, y) / h^3 for d = 3."""
    s = 0.0
    for n0 in range(int(math.ceil((x[0] - 0.5) / h)), int(math.floor((x[0] + 0.5) / h)) + 1):
        ax = (x[0] - n0 * h) ** 2
        ay = (y[0] - n0 * h) ** 2
        if ax >= PHI_R2_MAX or ay >= PHI_R2_MAX:
            continue
        for n1 in range(int(math.ceil((x[1] - 0.5) / h)), int(math.floor((x[1] + 0.5) / h)) + 1):
            bx = ax + (x[1] - n1 * h) ** 2
            by = ay + (y[1] - n1 * h) ** 2
            if bx >= PHI_R2_MAX or by >= PHI_R2_MAX:
                continue
            for n2 in range(int(math.ceil((x[2] - 0.5) / h)), int(math.floor((x[2] + 0.5) / h)) + 1):
                cx = bx + (x[2] - n2 * h) ** 2
                cy = by + (y[2] - n2 * h) ** 2
                if cx >= PHI_R2_MAX or cy >= PHI_R2_MAX:
                    continue
                s += _phi(pc, cx) * _phi(pc, cy)
    return s


@nb.njit(inline="always")
def _veff4(x, y, h, pc):
    s = 0.0
    for n0 in range(int(math.ceil((x[0] - 0.5) / h)), int(math.floor((x[0] + 0.5) / h)) + 1):
        ax = (x[0] - n0 * h) ** 2
        ay = (y[0] - n0 * h) ** 2
        if ax >= PHI_R2_MAX or ay >= PHI_R2_MAX:
            continue
        for n1 in range(int(math.ceil((x[1] - 0.5) / h)), int(math.floor((x[1] + 0.5) / h)) + 1):
            bx = ax + (x[1] - n1 * h) ** 2
            by = ay + (y[1] - n1 * h) ** 2
            if bx >= PHI_R2_MAX or by >= PHI_R2_MAX:
                continue
            for n2 in range(int(math.ceil((x[2] - 0.5) / h)), int(math.floor((x[2] + 0.5) / h)) + 1):
                cx = bx + (x[2] - n2 * h) ** 2
                cy = by + (y[2] - n2 * h) ** 2
                if cx >= PHI_R2_MAX or cy >= PHI_R2_MAX:
                    continue
                for n3 in range(int(math.ceil((x[3] - 0.5) / h)), int(math.floor((x[3] + 0.5) / h)) + 1):
                    ex = cx + (x[3] - n3 * h) ** 2
                    ey = cy + (y[3] - n3 * h) ** 2
                    if ex >= PHI_R2_MAX or ey >= PHI_R2_MAX:
                        continue
                    s += _phi(pc, ex) * _phi(pc, ey)
    return s


@nb.njit(cache=True)
def veff_value(x, y, h, pc):
    """V_eff(x, y) = h^d sum_n phi(x - nh) phi(y - nh)."""
    d = x.size
    if d == 3:
        return h**3 * _veff3(x, y, h, pc)
    return h**4 * _veff4(x, y, h, pc)


@nb.njit(nogil=True, cache=True)
def _matched_pairs(k0, k1, id0, n, K, delta, h, pc, d, out):
    x = np.zeros(d)
    y = np.zeros(d)
    sq = math.sqrt(delta)
    hd = h**d
    for s in range(n):
        sid = np.uint32(id0 + s)
        x[:] = 0.0
        y[:] = 0.0
        acc = 0.0
        for k in range(K):
            dist2 = 0.0
            for q in range(d):
                dist2 += (x[q] - y[q]) ** 2
            if dist2 < 1.0:
                acc += _veff3(x, y, h, pc) if d == 3 else _veff4(x, y, h, pc)
            for p in range(2):
                for blk in range((d + 3) // 4):
                    z = rng.normal4(sid, np.uint32(k), np.uint32(p), np.uint32(blk), k0, k1)
                    for q in range(4):
                        if 4 * blk + q < d:
                            if p == 0:
                                x[4 * blk + q] += sq * z[q]
                            else:
                                y[4 * blk + q] += sq * z[q]
        out[s] = delta * hd * acc


def matched_pair_integrals(T: float, N: int, d: int = 3, h: float = DEFAULT_H, delta: float = DEFAULT_DELTA,
                           phi_const: float = 18.136933916866823, seed: int = 0,
                           threads: int | None = None) -> np.ndarray:
    """delta sum_{k<K} V_eff(W^1_k, W^2_k) for N independent path pairs."""
    K = steps_for(T, delta)
    k0, k1 = rng.derive_key(seed, rng.TAG_PATH, 0x0A7C)
    out = np.empty(N)

    def work(lo, hi):
        _matched_pairs(np.uint32(k0), np.uint32(k1), lo, hi - lo, K, delta, h, phi_const, d, out[lo:hi])

    map_shards(work, N, threads=threads)
    return out


def matched_variance_MT(beta: float, T: float, N: int, d: int = 3, h: float = DEFAULT_H,
                        delta: float = DEFAULT_DELTA, phi_const: float = 18.136933916866823, seed: int = 0,
                        threads: int | None = None):
    """Var(M_T) in the discrete model: E[exp(beta^2 delta sum V_eff(W^1_k, W^2_k))] - 1."""
    from .stats import estimate_from_samples

    I = matched_pair_integrals(T, N, d, h, delta, phi_const, seed, threads)
    return estimate_from_samples(np.expm1(beta**2 * I))


# ---------------------------------------------------------------------------
# fluctuation statistic and bracket


@dataclass(frozen=True)
class CltDraw:
    env_id: int
    M_T: float
    M_tauT: float
    G: float
    se_within: float
    G_replicates: tuple
    degenerate: bool = False


DEGENERATE_M = 1e-6


def clt_profile(env: EnvironmentHandle, beta: float, T: float, taus, N_paths: int, env_id: int = 0,
                replicates: int = DEFAULT_REPLICATES, V0: float = 3.95) -> list:
    """One CltDraw per tau, all from the same coupled particle runs."""
    taus = [float(t) for t in taus]
    if any(t < 1 for t in taus):
        raise ValueError("tau must be at least 1")
    scale = T ** ((env.d - 2) / 4)
    active = sorted({t for t in taus if t > 1})
    if beta == 0.0 or not active:
        return [CltDraw(env_id, 1.0, 1.0, 0.0, 0.0, tuple([0.0] * replicates)) for _ in taus]
    q = estimate_partition(env, beta, [T] + [t * T for t in active], N_paths, replicates=replicates, V0=V0)
    M, reps = q.M, q.replicates
    out = []
    for t in taus:
        if t == 1:
            out.append(CltDraw(env_id, float(M[0]), float(M[0]), 0.0, 0.0, tuple([0.0] * replicates)))
            continue
        j = 1 + active.index(t)
        G = scale * (M[j] / M[0] - 1.0)
        G_reps = tuple(float(scale * (r[j] / r[0] - 1.0)) for r in reps)
        se = float(np.std(G_reps, ddof=1) / math.sqrt(len(G_reps))) if replicates > 1 else math.nan
        out.append(CltDraw(env_id, float(M[0]), float(M[j]), float(G), se, G_reps, bool(M[0] < DEGENERATE_M)))
    return out


def clt_sample(env: EnvironmentHandle, beta: float, T: float, tau: float, N_paths: int, env_id: int = 0,
               replicates: int = DEFAULT_REPLICATES, V0: float = 3.95) -> CltDraw:
    """G = T^{(d-2)/4} (M_{tau T}/M_T - 1) from coupled horizons."""
    return clt_profile(env, beta, T, [tau], N_paths, env_id, replicates, V0)[0]


def cross_pair_sum(xa, wa, xb, wb, K: CovarianceKernel) -> tuple[float, float]:
    """sum_{i,j} wa_i wb_j V(xa_i - xb_j) and the Kish size of the pair terms."""
    ta, tb = cKDTree(xa), cKDTree(xb)
    sm = ta.sparse_distance_matrix(tb, 1.0, output_type="coo_matrix")
    if sm.nnz == 0:
        return 0.0, 0.0
    terms = wa[sm.row] * wb[sm.col] * eval_kernel(K, sm.data)
    tot = float(terms.sum())
    s2 = float(np.sum(terms**2))
    return tot, (tot * tot / s2 if s2 > 0 else 0.0)


@dataclass(frozen=True)
class BracketDraw:
    env_id: int
    T: float
    M_T: float
    product: float  # Z_A Z_B, unbiased for M_T^2
    overlap: float  # T^{d/2} sum w^A w^B V, normalized weights
    statistic: float  # beta^2 T^{d/2} Z_A Z_B overlap - beta^2 C_3 Z_A Z_B
    pair_ess: float
    reliable: bool


def bracket_derivative_estimate(env: EnvironmentHandle, beta: float, horizons, N_paths: int, c3: float,
                                K: CovarianceKernel, env_id: int = 0, V0: float = 3.95) -> list:
    """Per horizon: beta^2 T^{d/2} M_T^2 E_polymer^{x2}[V(W^1_T - W^2_T)] - beta^2 C_3 M_T^2.

    The two polymer copies come from independent replicates, so the product
    Z_A Z_B sum_ij wA_i wB_j V(xA_i - xB_j) is unbiased for the unnormalized
    two-replica overlap.
    """
    hs = np.atleast_1d(np.asarray(horizons, dtype=float))
    d = env.d
    if beta == 0.0:
        return [BracketDraw(env_id, float(T), 1.0, 1.0, 0.0, 0.0, 0.0, True) for T in hs]
    q = estimate_partition(env, beta, hs, N_paths, replicates=2, V0=V0, keep_particles=True)
    out = []
    for i, T in enumerate(hs):
        wa = np.exp(q.log_weights[0, i])
        wb = np.exp(q.log_weights[1, i])
        wa /= wa.sum()
        wb /= wb.sum()
        pair, pess = cross_pair_sum(q.positions[0, i], wa, q.positions[1, i], wb, K)
        prod = float(q.replicates[0, i] * q.replicates[1, i])
        overlap = T ** (d / 2) * pair
        stat = beta**2 * (overlap - c3) * prod
        out.append(BracketDraw(env_id, float(T), float(q.M[i]), prod, overlap, stat, pess, pess >= MIN_PAIR_ESS))
    return out


def endpoint_hit_fraction(env: EnvironmentHandle, T: float, N_paths: int) -> tuple[float, int]:
    """Fraction of cross-replicate endpoint pairs closer than 1, for unweighted free paths."""
    q = estimate_partition(env, 0.0, [T], N_paths, replicates=2, resample_every=None, keep_particles=True)
    ta, tb = cKDTree(q.positions[0, 0]), cKDTree(q.positions[1, 0])
    hits = ta.count_neighbors(tb, 1.0)
    return hits / N_paths**2, hits


def she_scaling_map(eps: float, t: float) -> tuple[float, float]:
    """u_{eps,t}(.) has the law of M_{eps^-2 t}(eps^-1 .): returns (eps^-2 t, eps^-1)."""
    if eps <= 0 or t <= 0:
        raise ValueError("eps and t must be positive")
    return t / eps**2, 1.0 / eps
