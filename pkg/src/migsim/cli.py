"""Command line entry point: ``migsim run|compare|validate``."""

from __future__ import annotations

import argparse
import sys

import yaml

from .runner import ALGORITHMS, run
from .scenario import POLICIES, ScenarioError, parse_scenario
from .report import write_comparison, write_run
from .simcore import SimulationError

EXIT_OK, EXIT_INVALID, EXIT_SIM = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="migsim", description="Plan and simulate concurrent live migrations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario file (.yaml or .json)")
        p.add_argument("--policy", choices=POLICIES, help="override the scenario's bandwidth policy")
        p.add_argument("--seed", type=int, help="override the scenario's workload seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--trace", action="store_true", help="also write trace.jsonl")

    p = sub.add_parser("run", help="simulate one algorithm")
    common(p)
    p.add_argument("--algo", choices=ALGORITHMS, default="slamig")
    p.add_argument("--order", help="run one of the scenario's imposed orders instead")

    p = sub.add_parser("compare", help="simulate several algorithms into one table")
    common(p)
    p.add_argument("--algos", default="slamig,onebyone,cqncr,fptas",
                   help="comma separated list (default: slamig,onebyone,cqncr,fptas)")

    p = sub.add_parser("validate", help="check a scenario and print it with defaults filled in")
    p.add_argument("--scenario", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = parse_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print(yaml.safe_dump(sc.to_dict(), sort_keys=True), end="")
        return EXIT_OK
    try:
        if args.command == "run":
            res = run(sc, args.algo, args.policy, args.seed, args.order)
            files = write_run(res, args.out, args.trace)
        else:
            algos = [a.strip() for a in args.algos.split(",") if a.strip()]
            bad = [a for a in algos if a not in ALGORITHMS]
            if bad:
                print(f"unknown algorithms {bad}; choose from {list(ALGORITHMS)}", file=sys.stderr)
                return EXIT_INVALID
            results = [run(sc, a, args.policy, args.seed) for a in algos]
            files = write_comparison(results, args.out, args.trace)
    except (SimulationError, ValueError, OSError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
