#!/usr/bin/env python3
"""Sweep the stealthiness budget or the attack horizon and tabulate impact.

Reruns the assessment for each value of the chosen parameter and prints one
column per (vulnerability, strategy) pair, which is handy for eyeballing the
monotone budget response and the horizon behavior of recording strategies.
"""

import argparse
import dataclasses
import sys

from stealthimpact import assess, bundled_scenario_path, load_scenario


def parse_values(raw, parameter):
    cast = int if parameter == "N" else float
    return [cast(tok) for tok in raw.split(",") if tok.strip()]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", default=None)
    parser.add_argument("--parameter", choices=["eps", "N"], default="eps")
    parser.add_argument(
        "--values",
        default=None,
        help="comma-separated sweep values (defaults: eps 0.05..0.95, N 2..50)",
    )
    parser.add_argument(
        "--strategy",
        action="append",
        default=None,
        help="strategy filter, repeatable (default: all)",
    )
    parser.add_argument(
        "--vulnerability",
        action="append",
        default=None,
        help="vulnerability filter, repeatable (default: all)",
    )
    parser.add_argument("--jobs", type=int, default=None)
    args = parser.parse_args()

    scenario = load_scenario(args.scenario or bundled_scenario_path())
    if args.values:
        values = parse_values(args.values, args.parameter)
    elif args.parameter == "eps":
        values = [round(0.05 + 0.1 * i, 2) for i in range(10)]
    else:
        values = [2, 5, 10, 20, 35, 50]

    vulns = args.vulnerability or list(scenario.vulnerabilities)
    strategies = args.strategy or list(scenario.strategies)
    pairs = [(v, s) for v in vulns for s in strategies]
    field = "epsilon" if args.parameter == "eps" else "horizon"

    label = f"{args.parameter:>8}"
    cols = [f"{v[-1]}:{s}" for v, s in pairs]
    print(label + "".join(f" {c:>18}" for c in cols))
    for val in values:
        variant = dataclasses.replace(scenario, **{field: val})
        row = [assess(variant, v, s, jobs=args.jobs).report.exceed_prob
               for v, s in pairs]
        print(f"{val:>8}" + "".join(f" {p:18.6f}" for p in row))
    return 0


if __name__ == "__main__":
    sys.exit(main())
