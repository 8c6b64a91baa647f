#!/usr/bin/env python3
"""Write a demo dataset, schema, and run config ready for `stress run`."""

import argparse
import sys
from pathlib import Path

from stresskit.data import write_csv, write_schema
from stresskit.synth import make_adult_like

CONFIG_TEMPLATE = """\
dataset = "{base}/data.csv"
schema = "{base}/schema.json"
objective = "auc"
budget = 0.3
train_fraction = 0.8
seed = 17
output_dir = "{base}/out"

[error]
type = "missing_value"
target = "education_num"

[pipeline]
cleaner = "mean_impute"
model = "logistic_regression"
task = "classification"

[search]
beam_width = 3
max_depth = 3
tpe_iterations = 60
n_init = 12
gamma = 0.1
candidate_pool = 64
"""


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--rows", type=int, default=5000)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    dataset = make_adult_like(args.rows, args.seed)
    write_csv(dataset, args.out_dir / "data.csv")
    write_schema(dataset.schema, args.out_dir / "schema.json")
    (args.out_dir / "run.toml").write_text(
        CONFIG_TEMPLATE.format(base=args.out_dir.resolve()), encoding="utf-8"
    )
    print(f"wrote {args.out_dir}/data.csv ({args.rows} rows), schema.json, run.toml")
    return 0


if __name__ == "__main__":
    sys.exit(main())
