"""Command line entry point: ``linexplore {run,sweep,verify,bayes}``."""

import argparse
import json
import sys

from .harness import (
    estimate_bayes_regret,
    load_config,
    load_document,
    run_experiment,
    run_sweep,
    sublinearity_diagnostic,
)
from .verify import run_suite, write_report


def _fit(ledger) -> dict:
    try:
        fit = sublinearity_diagnostic(ledger)
    except ValueError:
        return {}
    return {"alpha": fit.alpha, "r2": fit.r2, "zero_regret": fit.zero_regret}


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.output:
        config.output = args.output
    if args.episodes:
        config.episodes = args.episodes
    for seed, ledger in run_experiment(config, workers=args.workers).items():
        print(json.dumps({"seed": seed, "episodes": len(ledger), "total_regret": ledger.total, **_fit(ledger)}))
    return 0


def cmd_sweep(args) -> int:
    for row in run_sweep(load_document(args.config), workers=args.workers):
        print(json.dumps(row))
    return 0


def cmd_bayes(args) -> int:
    config = load_config(args.config)
    est = estimate_bayes_regret(config, args.draws, seed_stride=args.seed_stride, workers=args.workers)
    print(json.dumps({"draws": args.draws, "mean": est.mean, "stderr": est.stderr}))
    return 0


def cmd_verify(args) -> int:
    reports = run_suite(seed=args.seed, quick=args.quick)
    for r in reports:
        print(r.summary())
    write_report(reports, args.report)
    if not all(r.passed for r in reports):
        failed = [r.lemma for r in reports if not r.passed]
        _error("VerificationFailed", f"failed checks: {', '.join(failed)}")
        return 1
    return 0


def _error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linexplore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment over its seeds")
    p.add_argument("config")
    p.add_argument("--output", help="override the output path prefix")
    p.add_argument("--episodes", type=int, help="override the episode count")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid over agents and seeds")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the lemma checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="use a tenth of the trials")
    p.add_argument("--report", default="verify_report.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bayes", help="cumulative regret averaged over prior draws")
    p.add_argument("config")
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--seed-stride", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bayes)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, TypeError) as exc:
        _error(type(exc).__name__, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
