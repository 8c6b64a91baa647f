#!/usr/bin/env python3
"""Sweep the error budget for one run config and print psi per budget.

Runs the full search at each budget level, so expect runtime proportional to
the number of levels. Output is CSV on stdout (budget, clean_psi, psi).
"""

import argparse
import dataclasses
import sys

from stresskit.report import load_run_config, run


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True)
    parser.add_argument("--budgets", default="0.05,0.1,0.2,0.3,0.5",
                        help="comma-separated budget levels")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    base = load_run_config(args.config)
    print("budget,clean_psi,psi")
    for token in args.budgets.split(","):
        budget = float(token)
        config = dataclasses.replace(
            base,
            budget=budget,
            output_dir=f"{base.output_dir.rstrip('/')}-b{token.strip()}",
        )
        report = run(config, jobs=args.jobs)
        print(f"{budget},{report.clean_psi},{report.adversarial_psi}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
