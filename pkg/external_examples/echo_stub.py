#!/usr/bin/env python3
"""Minimal protocol stub: accepts the standard file arguments and always
reports an AUC of 0.5. Useful for conformance tests and as a template."""

import argparse
import json


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--train", required=True)
    parser.add_argument("--test", required=True)
    parser.add_argument("--schema", required=True)
    parser.parse_args()
    print(json.dumps({"auc": 0.5}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
