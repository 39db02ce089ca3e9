"""Command line entry point: ``wdlab <experiment> [--config FILE] [flags]``.

Flags override values from the config file.  Exit codes: 0 all checks pass,
2 a statistical check failed, 3 configuration error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .harness import (EXIT_CONFIG, EXIT_IO, EXPERIMENTS, ConfigError, ExperimentConfig, run_experiment,
                      shipped_configs)

# flag -> config field
_FLAGS = {
    "d": ("--d", int),
    "beta": ("--beta", float),
    "beta_fraction": ("--beta-fraction", float),
    "T": ("--T", float),
    "tau": ("--tau", float),
    "radii": ("--radii", float),
    "N": ("--N", int),
    "N_aux": ("--N-aux", int),
    "n_env": ("--n-env", int),
    "n_paths": ("--n-paths", int),
    "replicates": ("--replicates", int),
    "dt": ("--dt", float),
    "h": ("--h", float),
    "T_cut": ("--T-cut", float),
    "seed": ("--seed", int),
    "constants": ("--constants", str),
    "out": ("--out", str),
}
_LISTS = {"T", "tau", "radii"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wdlab", description="Weak-disorder polymer fluctuation experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="experiment", required=True, metavar="experiment")
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="config JSON path or shipped config name")
        sp.add_argument("--threads", type=int, help="worker threads (default: WDLAB_THREADS or all cores)")
        for key, (flag, typ) in _FLAGS.items():
            if key == "T_cut":
                sp.add_argument(flag, "--tcut", dest=key, type=typ)
            elif key in _LISTS:
                sp.add_argument(flag, dest=key, type=typ, nargs="+")
            else:
                sp.add_argument(flag, dest=key, type=typ)
    sub.add_parser("list", help="list shipped configs")
    return p


def make_config(args) -> ExperimentConfig:
    if args.config:
        base = ExperimentConfig.load(args.config).to_dict()
        if base["experiment"] != args.experiment:
            raise ConfigError(f"config is for {base['experiment']!r}, not {args.experiment!r}")
    else:
        base = {"experiment": args.experiment}
    for key in _FLAGS:
        v = getattr(args, key)
        if v is not None:
            base[key] = v
    if args.beta is not None:
        base["beta_fraction"] = None
    return ExperimentConfig.from_dict(base)


def _summary_line(res) -> str:
    fails = [r.quantity for r in res.records if r.passed is False]
    status = "PASS" if not fails else "FAIL (" + ", ".join(fails) + ")"
    return f"{res.config.experiment}: {len(res.records)} records, {status}, {res.runtime:.1f} s"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "list":
        print("\n".join(shipped_configs()))
        return 0
    if args.threads is not None:
        os.environ["WDLAB_THREADS"] = str(args.threads)
    try:
        cfg = make_config(args)
        res = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not cfg.out:
        for r in res.records:
            print(json.dumps({"quantity": r.quantity, "params": r.params, "estimate": r.estimate,
                              "stderr": r.stderr, "target": r.target, "passed": r.passed}, sort_keys=True))
    print(_summary_line(res), file=sys.stderr)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
