"""Command-line entry point: run sweeps, fit rates, audit lower-bound families, inspect Gram matrices."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from mixagg.harness import (AUDIT_FIELDS, FIELDS, ExperimentConfig, audit_rows, load_config,
                            rate_regression, read_rows, resolve_output_path, run_experiment, write_rows)
from mixagg.sampling import SeedSpec
from mixagg.spectra import VARIANTS, ConeSpec, compatibility_constant, load_matrix, minor_eigen_extremes, \
    restricted_eigenvalue

# argparse types for the config fields that can be overridden from the command line
_LIST_FIELDS = {"n_values": int, "bounds": str, "deltas": float, "truth_weights": float,
                "truth_values": float}
_SCALAR_FIELDS = {"scenario": str, "K": int, "replications": int, "master_seed": int, "D": int,
                  "gamma": float, "mu": float, "quadrature_nodes": int, "output_path": str,
                  "epsilon": float, "zeta_restarts": int, "compatibility_restarts": int, "jobs": int}
_FLAG_FIELDS = ("compute_zeta", "record_wall_time")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_run(sub):
    p = sub.add_parser("run", help="run an experiment sweep from a JSON config")
    p.add_argument("config", help="path to the JSON experiment config")
    for name, typ in _SCALAR_FIELDS.items():
        p.add_argument(_flag(name), dest=name, type=typ, default=None)
    for name, typ in _LIST_FIELDS.items():
        p.add_argument(_flag(name), dest=name, type=typ, nargs="+", default=None)
    for name in _FLAG_FIELDS:
        p.add_argument(_flag(name), dest=name, action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--solver", type=json.loads, default=None,
                   help="JSON object of solver options, replacing the config's")
    p.set_defaults(func=_cmd_run)


def _cmd_run(args, out):
    config = load_config(args.config)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names and v is not None}
    config = config.with_overrides(**overrides)
    path = resolve_output_path(config)
    rows = run_experiment(config, output_path=path)
    if path is None:
        write_rows(out, rows, AUDIT_FIELDS if config.scenario == "lower-bound-audit" else FIELDS)
    else:
        print(f"wrote {len(rows)} rows to {path}", file=out)
    return 0


def _add_regress(sub):
    p = sub.add_parser("regress", help="log-log slope of a per-n statistic from a results CSV")
    p.add_argument("csv", help="results CSV written by 'run'")
    p.add_argument("--statistic", choices=("median", "mean"), default="median")
    p.add_argument("--field", default="excess_kl", help="column to regress (default excess_kl)")
    p.add_argument("--bound-id", default=None, help="keep only rows with this bound_id")
    p.set_defaults(func=_cmd_regress)


def _cmd_regress(args, out):
    rows = read_rows(args.csv)
    if args.bound_id is not None:
        rows = [r for r in rows if r.get("bound_id") == args.bound_id]
    res = rate_regression(rows, args.statistic, args.field)
    print(f"slope {res.slope:.6f}", file=out)
    print(f"stderr {res.stderr:.6f}", file=out)
    print(f"intercept {res.intercept:.6f}", file=out)
    for n, v in zip(res.n_values, res.statistics):
        print(f"n={n} {args.statistic}={v:.10g}", file=out)
    return 0


def _add_audit(sub):
    p = sub.add_parser("audit-lower-bound", help="build a hypothesis family and check its Fano conditions")
    p.add_argument("--d", type=int, default=2, help="sparsity of the packing vectors")
    p.add_argument("--K", type=int, default=8, help="dictionary size")
    p.add_argument("--n", type=int, default=10_000, help="sample size")
    p.add_argument("--epsilon", type=float, default=None,
                   help="override the recipe epsilon of the sparse family")
    p.add_argument("--gamma", type=float, default=None,
                   help="also audit the shifted family with this off-support mass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quadrature-nodes", type=int, default=2**12 + 1)
    p.set_defaults(func=_cmd_audit)


def _cmd_audit(args, out):
    rows = audit_rows(args.d, args.K, args.n, args.epsilon, args.gamma, args.seed,
                      args.quadrature_nodes)
    write_rows(out, rows, AUDIT_FIELDS)
    return 0 if all(r["passed"] for r in rows) else 1


def _add_spectra(sub):
    p = sub.add_parser("spectra", help="compatibility constants, restricted eigenvalue or minor extremes")
    p.add_argument("matrix", help="square PSD matrix as JSON nested list or whitespace text")
    p.add_argument("--variant", choices=VARIANTS + ("minors",), default="kappa-bar")
    p.add_argument("--support", type=int, nargs="+", default=None,
                   help="0-based support J (kappa and kappa-bar)")
    p.add_argument("--c", type=float, default=1.0, help="cone parameter")
    p.add_argument("--s", type=int, default=None, help="support size (restricted-eigenvalue)")
    p.add_argument("--k", type=int, default=None, help="minor size (minors)")
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_spectra)


def _cmd_spectra(args, out):
    A = load_matrix(args.matrix)
    seed = SeedSpec(args.seed, 0, "spectra")
    if args.variant == "minors":
        if args.k is None:
            raise ValueError("--k is required for minors")
        res = minor_eigen_extremes(A, args.k, seed=seed)
        doc = res._asdict()
    elif args.variant == "restricted-eigenvalue":
        if args.s is None:
            raise ValueError("--s is required for restricted-eigenvalue")
        est = restricted_eigenvalue(A, args.s, args.c, restarts=args.restarts or 8, seed=seed)
        doc = est.to_dict()
    else:
        if not args.support:
            raise ValueError("--support is required for kappa and kappa-bar")
        est = compatibility_constant(A, ConeSpec(tuple(args.support), args.c, args.variant),
                                     restarts=args.restarts or 64, seed=seed)
        doc = est.to_dict()
    for key, value in doc.items():
        print(f"{key} {json.dumps(value)}", file=out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixagg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_regress(sub)
    _add_audit(sub)
    _add_spectra(sub)
    return parser


def main(argv=None, out=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    out = out or sys.stdout
    try:
        return args.func(args, out)
    except (ValueError, OSError) as exc:
        print(f"mixagg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
