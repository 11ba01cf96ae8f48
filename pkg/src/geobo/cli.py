"""Command-line entry point: ``geobo run | summarize | beta-min``."""

import argparse
import sys
from pathlib import Path

from .harness import (
    CONFIG_KEYS,
    ConfigError,
    config_from_mapping,
    load_config,
    read_records,
    run_experiment,
    summarize,
    write_summary,
)

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _add_override_flags(p):
    for key in CONFIG_KEYS:
        flags = [f"--{key}"]
        alias = "--" + key.replace(".", "-").replace("_", "-")
        if alias not in flags:
            flags.append(alias)
        if key in ("deterministic", "trace"):
            p.add_argument(*flags, dest=key, action="store_const", const=True, default=None)
        else:
            p.add_argument(*flags, dest=key, default=None, metavar=key.split(".")[-1].upper())


def build_parser():
    parser = argparse.ArgumentParser(prog="geobo", description="Geometry-aware high-dimensional BO experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a method x trial experiment")
    run.add_argument("--config", help="flat YAML config file")
    _add_override_flags(run)

    summ = sub.add_parser("summarize", help="recompute summary.csv from records.csv")
    summ.add_argument("--in", dest="records", required=True)
    summ.add_argument("--out-dir", default=None, help="defaults to the records' directory")

    beta = sub.add_parser("beta-min", help="estimate the smallest valid kernel beta")
    beta.add_argument("--manifold", choices=("sphere", "spd", "euclidean"), required=True)
    beta.add_argument("--dim", type=int, required=True)
    beta.add_argument("--n-samples", type=int, default=50)
    beta.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args):
    overrides = {k: getattr(args, k) for k in CONFIG_KEYS}
    try:
        cfg = load_config(args.config, overrides) if args.config else config_from_mapping({}, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    def progress(outcome):
        status = f"{len(outcome.aborts)} aborted" if outcome.aborts else "ok"
        print(f"trial {outcome.trial}: {status}", file=sys.stderr, flush=True)

    out_dir, outcomes = run_experiment(cfg, progress=progress)
    aborts = [a for o in outcomes for a in o.aborts]
    print(f"wrote {out_dir / 'records.csv'}")
    if aborts:
        for a in aborts:
            print(f"aborted: {a['method']} trial {a['trial']}: {a['reason']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_summarize(args):
    path = Path(args.records)
    try:
        records = read_records(path)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read records: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary, final = summarize(records)
    out_dir = Path(args.out_dir) if args.out_dir else path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary(summary, final, out_dir)
    last = {}
    for m, it, med, q1, q3, n in summary:
        last[m] = (it, med, q1, q3, n)
    print("method,iteration,median_log10_regret,q1,q3,n_trials")
    for m, (it, med, q1, q3, n) in last.items():
        print(f"{m},{it},{med:.4f},{q1:.4f},{q3:.4f},{n}")
    return EXIT_OK


def _cmd_beta_min(args):
    from .kernels import estimate_beta_min
    from .manifolds import SPD, Euclidean, Sphere

    if args.dim < 1:
        print("--dim must be positive", file=sys.stderr)
        return EXIT_CONFIG
    man = {"sphere": Sphere, "spd": SPD, "euclidean": Euclidean}[args.manifold](args.dim)
    try:
        value = estimate_beta_min(man, n_samples=args.n_samples, rng_seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{value:.6g}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    handler = {"run": _cmd_run, "summarize": _cmd_summarize, "beta-min": _cmd_beta_min}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
