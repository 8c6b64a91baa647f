"""Command line front end.

    stress run --config run.toml [--jobs N] [--replay best_dcp.json]
    stress baseline --config run.toml --trials 100
"""

from __future__ import annotations

import argparse
import json
import sys

from .report import load_run_config, random_baseline, replay, run


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stress")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="search for the most adversarial corruption")
    p_run.add_argument("--config", required=True, help="TOML or JSON run configuration")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel candidate evaluations")
    p_run.add_argument("--replay", help="re-evaluate a serialized best-DCP instead of searching")

    p_base = sub.add_parser("baseline", help="random-search baseline within the budget")
    p_base.add_argument("--config", required=True)
    p_base.add_argument("--trials", type=int, default=100)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    config = load_run_config(args.config)
    if args.command == "run":
        if args.replay:
            outcome = replay(config, args.replay)
            print(json.dumps(outcome, sort_keys=True))
            return 0 if outcome["match"] else 1
        report = run(config, jobs=args.jobs)
        print(
            json.dumps(
                {
                    "clean_psi": report.clean_psi,
                    "adversarial_psi": report.adversarial_psi,
                    "n_evals": report.n_evals,
                    "output_dir": config.output_dir,
                },
                sort_keys=True,
            )
        )
        return 0
    psi = random_baseline(config, args.trials)
    print(json.dumps({"baseline_psi": psi, "trials": args.trials}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
