"""Experiment configuration, dispatch and bit-stable result files.

A run produces
  <out>                 records CSV (per-environment table for clt/bracket)
  <stem>.<table>.csv    auxiliary tables
  <stem>.json           summary with config, records, runtime and bundle hash
CSV files hold no timing, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import constants as C
from . import environment as E
from . import oracle as O
from . import stats as S
from ._parallel import map_shards
from .kernel import MollifierSpec, build_kernel, build_mollifier

EXPERIMENTS = ("kernel", "constants", "covariance", "rate", "elt", "elt2", "clt", "bracket", "keystone")
NEEDS_BUNDLE = frozenset({"elt", "elt2", "clt", "bracket"})
ENV_EXPERIMENTS = frozenset({"clt", "bracket", "keystone"})
ENV_DT = 1.0 / 32
ORACLE_DT = 1.0 / 128
CONFIG_DIR = Path(__file__).with_name("configs")

Z_TOL = 3.0
NEG_CONTROL_Z = 5.0
SLOPE_TOL = 0.1
CLT_VAR_TOL = 0.15
RATIO_TOL = 0.2

EXIT_OK, EXIT_STAT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Run parameters; beta given absolutely or as a fraction of the beta0 bound."""

    experiment: str
    d: int = 3
    beta: float | None = None
    beta_fraction: float | None = 0.5
    T: list = field(default_factory=lambda: [8.0])
    tau: list = field(default_factory=lambda: [16.0])
    radii: list = field(default_factory=lambda: [1.0, 1.5, 2.0, 3.0])
    N: int = 10_000
    N_aux: int = 10_000
    n_env: int = 100
    n_paths: int = 256
    replicates: int = 2
    dt: float | None = None
    h: float = E.DEFAULT_H
    T_cut: float = C.DEFAULT_T_CUT
    seed: int = 0
    constants: str | None = None
    out: str | None = None

    def __post_init__(self):
        self.T = [float(t) for t in np.atleast_1d(self.T)]
        self.tau = [float(t) for t in np.atleast_1d(self.tau)]
        self.radii = [float(r) for r in np.atleast_1d(self.radii)]
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        if self.d not in (3, 4):
            raise ConfigError("d must be 3 or 4")
        for name in ("N", "N_aux", "n_env", "n_paths", "replicates"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.beta is None:
            if self.beta_fraction is None or not 0 < self.beta_fraction <= 1:
                raise ConfigError("beta_fraction must lie in (0, 1]")
        elif self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not 0 < self.h <= 0.5:
            raise ConfigError("h must lie in (0, 1/2]")
        if not self.T or min(self.T) <= 0 or sorted(self.T) != self.T:
            raise ConfigError("T grid must be positive and ascending")
        if not self.tau or min(self.tau) < 1:
            raise ConfigError("tau values must be >= 1")
        if self.T_cut <= 0:
            raise ConfigError("T_cut must be positive")
        if self.experiment in ENV_EXPERIMENTS and self.replicates < 2:
            raise ConfigError("environment experiments need at least two replicates")

    @property
    def time_step(self) -> float:
        if self.dt is not None:
            return float(self.dt)
        return ENV_DT if self.experiment in ENV_EXPERIMENTS else ORACLE_DT

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        if "experiment" not in data:
            raise ConfigError("config needs an 'experiment' key")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        """Read a config file; a relative constants path is taken from the file's directory."""
        path = resolve_config_path(path)
        cfg = cls.from_json(path.read_text(encoding="utf-8"))
        if cfg.constants and not os.path.isabs(cfg.constants):
            cfg.constants = str(path.parent / cfg.constants)
        return cfg


def resolve_config_path(path) -> Path:
    """A file path, or the name of a shipped config such as 'clt'."""
    p = Path(path)
    if p.exists():
        return p
    shipped = CONFIG_DIR / (str(p) if p.suffix == ".json" else str(p) + ".json")
    if shipped.exists():
        return shipped
    raise ConfigError(f"config not found: {path}")


def shipped_configs() -> list[str]:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json") if p.stem in EXPERIMENTS)


@dataclass
class ResultRecord:
    experiment: str
    quantity: str
    params: dict
    estimate: float
    stderr: float | None = None
    target: float | None = None
    target_se: float | None = None
    passed: bool | None = None
    runtime: float = 0.0
    seed: int = 0
    bundle_hash: str = ""


RECORD_COLUMNS = ("experiment", "quantity", "params", "estimate", "stderr", "target", "target_se", "passed",
                  "seed", "bundle_hash")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    tables: dict = field(default_factory=dict)
    bundle: C.ConstantsBundle | None = None
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.records)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.passed else EXIT_STAT_FAIL


# ---------------------------------------------------------------------------
# CSV


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True, separators=(",", ":"), default=_json_default)
    return str(v)


def emit_csv(records, path, columns=None) -> None:
    """Header plus one row per record; floats at 17 significant digits, LF endings."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    rows = [dataclasses.asdict(r) if dataclasses.is_dataclass(r) else dict(r) for r in records]
    if columns is None:
        columns = RECORD_COLUMNS if isinstance(records[0], ResultRecord) else tuple(rows[0])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


# ---------------------------------------------------------------------------
# helpers


def load_bundle(cfg: ExperimentConfig) -> C.ConstantsBundle | None:
    if cfg.experiment not in NEEDS_BUNDLE:
        return C.ConstantsBundle.load(cfg.constants) if cfg.constants else None
    if not cfg.constants:
        raise ConfigError(f"experiment {cfg.experiment!r} needs a constants bundle")
    if not os.path.exists(cfg.constants):
        raise ConfigError(f"constants bundle not found: {cfg.constants}")
    try:
        b = C.ConstantsBundle.load(cfg.constants)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"malformed constants bundle: {exc}") from exc
    if b.d != cfg.d:
        raise ConfigError(f"bundle is for d={b.d}, config has d={cfg.d}")
    return b


def resolve_beta(cfg: ExperimentConfig, K, bundle: C.ConstantsBundle | None) -> float:
    if cfg.beta is not None:
        beta = float(cfg.beta)
    else:
        b0 = bundle.beta0_bound if bundle is not None else C.beta0_bound(C.green_mass(K))
        beta = cfg.beta_fraction * b0
    if bundle is not None and beta != 0.0 and abs(beta - bundle.beta) > 1e-9 * max(1.0, beta):
        raise ConfigError(f"bundle was computed at beta={bundle.beta}, config asks for {beta}")
    return beta


def _map_envs(fn, n_env: int) -> list:
    out = [None] * n_env

    def work(lo, hi):
        for e in range(lo, hi):
            out[e] = fn(e)

    map_shards(work, n_env, shard=1)
    return out


def _rec(cfg, quantity, estimate, stderr=None, target=None, target_se=None, passed=None, **params):
    return ResultRecord(cfg.experiment, quantity, params, _finite(estimate), _finite(stderr), _finite(target),
                        _finite(target_se), None if passed is None else bool(passed), seed=cfg.seed)


def _zpass(est, se, target, target_se=0.0, tol=Z_TOL) -> bool:
    s = math.hypot(se, target_se)
    if s == 0:
        return est == target
    return abs(est - target) / s <= tol


# ---------------------------------------------------------------------------
# experiments


def _run_kernel(cfg, K, bundle):
    phi = build_mollifier(MollifierSpec(d=cfg.d))
    beyond = np.linspace(1.0, 2.0, 101)
    v_out = float(np.max(np.abs(K(beyond))))
    recs = [
        _rec(cfg, "phi_mass", phi.mass, target=1.0, passed=abs(phi.mass - 1) <= 1e-8, tol=1e-8),
        _rec(cfg, "V_mass", K.mass, target=1.0, passed=abs(K.mass - 1) <= 1e-6, tol=1e-6),
        _rec(cfg, "V_outside_support", v_out, target=0.0, passed=v_out == 0.0),
        _rec(cfg, "V_min", float(K.values.min()), target=0.0, passed=bool(K.values.min() >= 0)),
        _rec(cfg, "V0", K.V0),
    ]
    tables = {"phi": [{"r": float(r), "phi": float(v)} for r, v in zip(phi.r, phi.values)],
              "V": [{"r": float(r), "V": float(v)} for r, v in zip(K.r, K.values)]}
    return recs, tables, None


def _run_constants(cfg, K, bundle):
    dt = cfg.time_step
    b = C.build_constants(cfg.d, cfg.beta, cfg.beta_fraction, K, N=cfg.N, N_direct=cfg.N_aux, T_cut=cfg.T_cut,
                          dt=dt, seed=cfg.seed)
    recs = []
    gm_mc = C.green_mass_mc(K, N=cfg.N_aux, T_cut=cfg.T_cut, dt=dt, seed=cfg.seed)
    recs.append(_rec(cfg, "green_mass", gm_mc.estimate, gm_mc.stderr, b.green_mass, 0.0,
                     _zpass(gm_mc.estimate, gm_mc.stderr, b.green_mass), route="mc_vs_quadrature"))
    recs.append(_rec(cfg, "beta0_bound", b.beta0_bound))
    s_zero = None
    for dd in (3, 4):
        Kd = K if dd == cfg.d else build_kernel(dd)
        s0 = C.sigma2(0.0, Kd, N=1, N_direct=cfg.N_aux, seed=cfg.seed, check=False)
        if dd == cfg.d:
            s_zero = s0
        cf = C.sigma2_closed_form_beta0(dd)
        recs.append(_rec(cfg, "sigma2_beta0", s0.sigma2, target=cf, passed=abs(s0.sigma2 / cf - 1) <= 1e-3,
                         d=dd))
    c2 = C.c2_constant(cfg.d)
    c2m = C.c2_mc(cfg.d, N=10 * cfg.N_aux, seed=cfg.seed)
    if cfg.d == 3:
        ref = 2 / math.sqrt(math.pi)
        recs.append(_rec(cfg, "c2_closed_form", c2, target=ref, passed=abs(c2 - ref) <= 1e-9))
    recs.append(_rec(cfg, "c2_mc", c2m.estimate, c2m.stderr, c2, 0.0, _zpass(c2m.estimate, c2m.stderr, c2)))
    for beta, s in ((0.0, s_zero), (b.beta, None)):
        if s is None:
            m = b.meta
            est, se, tgt, tse = b.c3, b.c3_se, m["c3_direct"], m["c3_direct_se"]
        else:
            est, se, tgt, tse = s.c3, s.c3_se, s.c3_direct, s.c3_direct_se
        recs.append(_rec(cfg, "c3_routes", est, se, tgt, tse, _zpass(est, se, tgt, tse), beta=beta))
    recs.append(_rec(cfg, "sigma2", b.sigma2, b.sigma2_se, beta=b.beta))
    recs.append(_rec(cfg, "c3", b.c3, b.c3_se, beta=b.beta))
    return recs, {}, b


def _covariance_profile(cfg, K, beta):
    return O.covariance_profile(beta, cfg.radii, cfg.N, K, T_cut=cfg.T_cut, dt=cfg.time_step, seed=cfg.seed)


def _run_covariance(cfg, K, bundle):
    beta = resolve_beta(cfg, K, bundle)
    prof = _covariance_profile(cfg, K, beta)
    recs = []
    for r, e in zip(prof.radii, prof.estimates):
        recs.append(_rec(cfg, "cov", e.estimate, e.stderr, x=float(r), beta=beta))
        if "rescaled" in e.diagnostics:
            recs.append(_rec(cfg, "rescaled_cov", e.diagnostics["rescaled"], e.diagnostics["rescaled_se"],
                             x=float(r), beta=beta))
    recs.append(_rec(cfg, "c1_hat", prof.c1_hat, prof.c1_hat_se, O.c1_first_order(beta, cfg.d), beta=beta))
    recs.append(_rec(cfg, "max_pair_z", prof.max_pair_z, target=0.0, passed=prof.max_pair_z <= Z_TOL,
                     beta=beta))
    return recs, {}, None


def _run_rate(cfg, K, bundle):
    beta = resolve_beta(cfg, K, bundle)
    dt = cfg.time_step
    d = cfg.d
    if bundle is not None and bundle.c1_hat is not None:
        c1, c1_se = bundle.c1_hat, bundle.c1_hat_se
    else:
        prof = _covariance_profile(cfg, K, beta)
        c1, c1_se = prof.c1_hat, prof.c1_hat_se
    cov = O.build_cov_lookup(beta, c1, cfg.N_aux, K, T_cut=cfg.T_cut, dt=dt, seed=cfg.seed)
    if bundle is not None and bundle.var_minf is not None:
        m2 = S.EstimateWithError(1.0 + bundle.var_minf, bundle.var_minf_se, 0)
    else:
        m2 = O.second_moment_Minf(beta, cfg.N_aux, K, T_cut=cfg.T_cut, dt=dt, seed=cfg.seed, c1_tail=c1)
    curve = O.l2_distance_curve(beta, cfg.T, cfg.N, K, cov, dt=dt, seed=cfg.seed)
    recs = [_rec(cfg, "c1_hat", c1, c1_se, beta=beta), _rec(cfg, "E_Minf2", m2.estimate, m2.stderr, beta=beta)]
    resc, resc_se = curve.rescaled(d)
    for T, e, rv, rs in zip(curve.T, curve.estimates, resc, resc_se):
        recs.append(_rec(cfg, "l2_distance", e.estimate, e.stderr, T=float(T), beta=beta))
        recs.append(_rec(cfg, "rescaled_l2", rv, rs, T=float(T), beta=beta))
    fit = S.fit_power_slope(curve.T, curve.values, curve.stderrs)
    slope_t = -(d - 2) / 2
    recs.append(_rec(cfg, "slope", fit.slope, fit.slope_se, slope_t, passed=abs(fit.slope - slope_t) <= SLOPE_TOL,
                     beta=beta))
    lvl = O.l2_level_target(c1, c1_se, m2, d)
    recs.append(_rec(cfg, "level", resc[-1], resc_se[-1], lvl.estimate, lvl.stderr,
                     _zpass(resc[-1], resc_se[-1], lvl.estimate, lvl.stderr), T=float(curve.T[-1]), beta=beta))
    return recs, {}, None


def _run_elt(cfg, K, bundle):
    beta = resolve_beta(cfg, K, bundle)
    recs = []
    last = None
    for T in cfg.T:
        e = O.expected_LT(beta, T, bundle.c3, cfg.N, K, dt=cfg.time_step, seed=cfg.seed, c3_se=bundle.c3_se)
        last = (T, e)
        ok = _zpass(e.estimate, e.stderr, 0.0) if T == cfg.T[-1] else None
        recs.append(_rec(cfg, "E_LT", e.estimate, e.stderr, 0.0, passed=ok, T=T, beta=beta, ess=e.diagnostics["ess"]))
    T, e = last
    g = e.diagnostics
    neg = g["first_term"] - 2 * bundle.c3 * g["exp_mean"]
    neg_se = math.sqrt(g["first_term_se"] ** 2 + (2 * bundle.c3 * g["exp_mean_se"]) ** 2
                       + (2 * bundle.c3_se * g["exp_mean"]) ** 2)
    recs.append(_rec(cfg, "E_LT_negative_control", neg, neg_se, 0.0, passed=abs(neg) / neg_se > NEG_CONTROL_Z,
                     T=T, beta=beta, c3_factor=2.0))
    return recs, {}, None


def _run_elt2(cfg, K, bundle):
    beta = resolve_beta(cfg, K, bundle)
    recs = []
    for T in cfg.T:
        e = O.second_moment_LT(beta, T, bundle.c3, cfg.N, K, dt=cfg.time_step, seed=cfg.seed)
        tgt, ok = None, None
        if beta == 0.0:
            tgt = O.second_moment_LT_beta0(T, bundle.c3, K)
            ok = _zpass(e.estimate, e.stderr, tgt)
        recs.append(_rec(cfg, "E_LT2", e.estimate, e.stderr, tgt, passed=ok, T=T, beta=beta,
                         ess=e.diagnostics["ess"]))
    return recs, {}, None


def _env(cfg, K, beta, e):
    return E.EnvironmentHandle.create(cfg.seed, e, K, h=cfg.h, delta=cfg.time_step, beta=beta,
                                      T_max=max(cfg.T) * max(cfg.tau))


def _run_keystone(cfg, K, bundle):
    beta = resolve_beta(cfg, K, bundle)
    T = cfg.T[0]

    def one(e):
        return E.estimate_partition(_env(cfg, K, beta, e), beta, [T], cfg.n_paths, replicates=cfg.replicates,
                                    V0=K.V0).replicates[:, 0]

    reps = np.array(_map_envs(one, cfg.n_env))
    M = reps.mean(axis=1)
    mean = S.estimate_from_samples(M)
    recs = [_rec(cfg, "mean_M", mean.estimate, mean.stderr, 1.0, passed=_zpass(mean.estimate, mean.stderr, 1.0),
                 T=T, beta=beta)]
    orc = E.matched_variance_MT(beta, T, cfg.N, cfg.d, cfg.h, cfg.time_step, K.phi_norm_const, cfg.seed)
    if beta == 0.0:
        v = S.EstimateWithError(0.0, 0.0, cfg.n_env)
    else:
        v = S.replicate_variance(reps)
    recs.append(_rec(cfg, "var_M", v.estimate, v.stderr, orc.estimate, orc.stderr,
                     _zpass(v.estimate, v.stderr, orc.estimate, orc.stderr), T=T, beta=beta,
                     raw=v.diagnostics.get("raw_variance")))
    recs.append(_rec(cfg, "min_M", float(M.min()), passed=bool(M.min() > 0), T=T))
    table = [{"env_id": e, "M_T": float(M[e]), "se_within": float(reps[e].std(ddof=1) / math.sqrt(reps.shape[1]))}
             for e in range(cfg.n_env)]
    return recs, {"envs": table}, None


def _run_clt(cfg, K, bundle):
    beta = resolve_beta(cfg, K, bundle)
    T = cfg.T[0]
    taus = cfg.tau

    def one(e):
        return E.clt_profile(_env(cfg, K, beta, e), beta, T, taus, cfg.n_paths, env_id=e,
                             replicates=cfg.replicates, V0=K.V0)

    draws = _map_envs(one, cfg.n_env)
    tables = {}
    G_by_tau = {}
    for j, tau in enumerate(taus):
        rows = [{"env_id": dr[j].env_id, "M_T": dr[j].M_T, "M_tauT": dr[j].M_tauT, "G": dr[j].G,
                 "se_within": dr[j].se_within} for dr in draws]
        tables[f"tau{tau:g}"] = rows
        G_by_tau[tau] = np.array([dr[j].G for dr in draws])
    primary = max(taus)
    tables["envs"] = tables.pop(f"tau{primary:g}")
    recs = []
    ndeg = sum(dr[0].degenerate for dr in draws)
    recs.append(_rec(cfg, "degenerate_envs", ndeg, passed=ndeg == 0, T=T))
    if all(np.all(G == 0) for G in G_by_tau.values()):
        recs.append(_rec(cfg, "normality", None, T=T, tau=primary, beta=beta, status="degenerate"))
        for tau in taus:
            recs.append(_rec(cfg, "var_G", 0.0, 0.0, bundle.g(tau) if beta else 0.0, T=T, tau=tau, beta=beta,
                             status="degenerate"))
        return recs, tables, None
    jp = taus.index(primary)
    for j, tau in enumerate(taus):
        reps = np.array([dr[j].G_replicates for dr in draws])
        v = S.replicate_variance(reps)
        g = bundle.g(tau)
        ok = abs(v.estimate / g - 1) <= CLT_VAR_TOL if g > 0 else None
        recs.append(_rec(cfg, "var_G", v.estimate, v.stderr, g, passed=ok, T=T, tau=tau, beta=beta,
                         raw=v.diagnostics["raw_variance"], noise=v.diagnostics["mean_within"]))
        if j == jp and cfg.n_env < S.MIN_NORMALITY_SAMPLES:
            recs.append(_rec(cfg, "normality", None, T=T, tau=tau, status="too_few_samples"))
        elif j == jp:
            noise = v.diagnostics["mean_within"]
            rep = S.normality_report(G_by_tau[tau], g + noise)
            recs.append(_rec(cfg, "skewness", rep.skewness, target=0.0, passed=rep.checks["skew"], T=T, tau=tau))
            recs.append(_rec(cfg, "excess_kurtosis", rep.excess_kurtosis, target=0.0, passed=rep.checks["kurtosis"],
                             T=T, tau=tau))
            recs.append(_rec(cfg, "ks_pvalue", rep.ks_pvalue, target=None, passed=rep.checks["ks"], T=T, tau=tau,
                             ks_distance=rep.ks_distance, sigma2_target=g + noise))
    active = sorted(t for t in taus if t > 1)
    if len(active) >= 2:
        prof = S.variance_profile_check({t: G_by_tau[t] for t in active}, bundle.beta**2 * bundle.sigma2, cfg.d)
        inc = prof.increment_cov
        recs.append(_rec(cfg, "increment_cov", inc.estimate, inc.stderr, 0.0, passed=_zpass(inc.estimate, inc.stderr, 0.0),
                         tau1=active[0], tau2=active[-1]))
        r = prof.rows[0].variance / prof.rows[-1].variance
        rt = prof.rows[0].target / prof.rows[-1].target
        recs.append(_rec(cfg, "variance_ratio", r, target=rt, passed=abs(r / rt - 1) <= RATIO_TOL,
                         tau1=active[0], tau2=active[-1]))
    return recs, tables, None


def _run_bracket(cfg, K, bundle):
    beta = resolve_beta(cfg, K, bundle)

    def one(e):
        return E.bracket_derivative_estimate(_env(cfg, K, beta, e), beta, cfg.T, cfg.n_paths, bundle.c3, K,
                                             env_id=e, V0=K.V0)

    draws = _map_envs(one, cfg.n_env)
    rows = [dataclasses.asdict(b) for dr in draws for b in dr]
    recs = []
    means = []
    for j, T in enumerate(cfg.T):
        st = S.estimate_from_samples([dr[j].statistic for dr in draws])
        means.append(st)
        ok = _zpass(st.estimate, st.stderr, 0.0) if j == len(cfg.T) - 1 else None
        recs.append(_rec(cfg, "bracket_minus_c3", st.estimate, st.stderr, 0.0, passed=ok, T=T, beta=beta))
        rel = float(np.mean([dr[j].reliable for dr in draws]))
        recs.append(_rec(cfg, "reliable_fraction", rel, T=T))
    if len(cfg.T) >= 2:
        a, b = abs(means[0].estimate), abs(means[-1].estimate)
        recs.append(_rec(cfg, "magnitude_shrinks", b - a, target=None, passed=b < a, T_first=cfg.T[0],
                         T_last=cfg.T[-1]))
    return recs, {"envs": rows}, None


_DISPATCH = {
    "kernel": _run_kernel,
    "constants": _run_constants,
    "covariance": _run_covariance,
    "rate": _run_rate,
    "elt": _run_elt,
    "elt2": _run_elt2,
    "clt": _run_clt,
    "bracket": _run_bracket,
    "keystone": _run_keystone,
}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Dispatch a config; writes outputs when cfg.out is set and write is true."""
    cfg.validate()
    bundle = load_bundle(cfg)
    K = build_kernel(cfg.d)
    t0 = time.perf_counter()
    recs, tables, new_bundle = _DISPATCH[cfg.experiment](cfg, K, bundle)
    runtime = time.perf_counter() - t0
    used = new_bundle if new_bundle is not None else bundle
    h = used.hash if used is not None else ""
    for r in recs:
        r.runtime = runtime
        r.bundle_hash = h
    res = ExperimentResult(cfg, recs, tables, new_bundle, runtime)
    if write and cfg.out:
        write_outputs(res)
    return res


def output_paths(out) -> tuple[Path, Path]:
    """(main CSV, JSON summary).  An out path ending in .json names the constants bundle."""
    p = Path(out)
    if p.suffix == ".json":
        return p.with_suffix(".csv"), p.with_suffix(".summary.json")
    return p, p.with_suffix(".json")


def write_outputs(res: ExperimentResult) -> list[Path]:
    main, summary = output_paths(res.config.out)
    if main.parent and not main.parent.exists():
        main.parent.mkdir(parents=True)
    stem = main.with_suffix("")
    written = []
    tables = dict(res.tables)
    if res.bundle is not None:
        p = Path(res.config.out) if res.config.out.endswith(".json") else Path(f"{stem}.bundle.json")
        res.bundle.save(p)
        written.append(p)
    if res.config.experiment in ("clt", "bracket"):
        emit_csv(tables.pop("envs"), main)
        rec_path = Path(f"{stem}.records.csv")
        emit_csv(res.records, rec_path)
        written += [main, rec_path]
    else:
        emit_csv(res.records, main)
        written.append(main)
    for name, rows in tables.items():
        p = Path(f"{stem}.{name}.csv")
        emit_csv(rows, p)
        written.append(p)
    doc = {
        "version": __version__,
        "config": res.config.to_dict(),
        "seed": res.config.seed,
        "bundle_hash": res.records[0].bundle_hash if res.records else "",
        "runtime": res.runtime,
        "passed": res.passed,
        "records": [dataclasses.asdict(r) for r in res.records],
    }
    with open(summary, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, default=_json_default, allow_nan=False)
        fh.write("\n")
    written.append(summary)
    return written
