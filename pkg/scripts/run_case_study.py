#!/usr/bin/env python3
"""Run the bundled benchmark end to end and print a result table.

For every vulnerability and strategy in the scenario this assesses the worst
case, prints one row per combination, and optionally writes the full JSON
report next to the table output.
"""

import argparse
import sys
import time

from stealthimpact import assess, bundled_scenario_path, load_scenario
from stealthimpact.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--scenario",
        default=None,
        help="scenario JSON path (default: bundled benchmark)",
    )
    parser.add_argument(
        "--mc-validate",
        action="store_true",
        help="attach a Monte Carlo cross-check to the JSON report",
    )
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--out", default=None, help="also write the JSON report here")
    args = parser.parse_args()

    path = args.scenario or bundled_scenario_path()
    scenario = load_scenario(path)

    header = f"{'vulnerability':<18} {'strategy':<16} {'p_exceed':>10} {'mean_lower':>11}  note"
    print(f"scenario: {scenario.name}  (N={scenario.horizon}, eps={scenario.epsilon})")
    print(header)
    print("-" * len(header))
    t0 = time.time()
    for vuln in scenario.vulnerabilities:
        for strat in scenario.strategies:
            entry = assess(scenario, vuln, strat, jobs=args.jobs)
            rep = entry.report
            if rep.unbounded:
                note = "unbounded"
            elif not rep.feasible:
                note = "infeasible"
            else:
                note = entry.variant
            mean = "inf" if rep.unbounded else f"{rep.mean_lower:11.6f}"
            print(f"{vuln:<18} {strat:<16} {rep.exceed_prob:10.6f} {mean:>11}  {note}")
    print(f"elapsed: {time.time() - t0:.1f}s")

    if args.out:
        argv = ["assess", "--scenario", str(path), "--out", args.out]
        if args.mc_validate:
            argv.append("--mc-validate")
        if args.jobs:
            argv += ["--jobs", str(args.jobs)]
        rc = cli_main(argv)
        if rc == 0:
            print(f"report written to {args.out}")
        return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
