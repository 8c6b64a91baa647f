#!/usr/bin/env python3
"""Realistic protocol example: mean imputation plus logistic regression on
top of pandas/scikit-learn.

Reads the train/test CSVs and the schema JSON handed over by the caller,
trains on the (possibly corrupted) train table, and prints a single JSON
object with the test AUC on stdout. Anything that goes wrong exits non-zero
with a diagnostic on stderr.
"""

import argparse
import json
import sys

import numpy as np
import pandas as pd
from sklearn.impute import SimpleImputer
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score
from sklearn.preprocessing import StandardScaler

MISSING_TOKEN = "?"


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        schema = json.load(fh)
    attributes = schema["attributes"]
    if not attributes or "label" not in schema:
        raise ValueError("schema needs attributes and a label")
    names = [a["name"] for a in attributes]
    if schema["label"] not in names:
        raise ValueError(f"label {schema['label']!r} not among attributes")
    return schema


def load_table(path, schema):
    names = [a["name"] for a in schema["attributes"]]
    frame = pd.read_csv(
        path, dtype=str, keep_default_na=False, na_values=["", MISSING_TOKEN]
    )
    if list(frame.columns) != names:
        raise ValueError(f"{path}: header does not match schema")
    for attr in schema["attributes"]:
        if attr["kind"] == "numeric":
            frame[attr["name"]] = pd.to_numeric(frame[attr["name"]])
    return frame


def featurize(train, test, schema):
    label = schema["label"]
    numeric = [a["name"] for a in schema["attributes"]
               if a["kind"] == "numeric" and a["name"] != label]
    categorical = [a["name"] for a in schema["attributes"]
                   if a["kind"] == "categorical" and a["name"] != label]

    blocks_train, blocks_test = [], []
    if numeric:
        imputer = SimpleImputer(strategy="mean")
        scaler = StandardScaler()
        x_tr = scaler.fit_transform(imputer.fit_transform(train[numeric]))
        x_te = scaler.transform(imputer.transform(test[numeric]))
        blocks_train.append(x_tr)
        blocks_test.append(x_te)
    for col in categorical:
        tr = train[col].fillna("<missing>")
        te = test[col].fillna("<missing>")
        values = sorted(tr.unique())
        for value in values:
            blocks_train.append((tr == value).to_numpy(float)[:, None])
            blocks_test.append((te == value).to_numpy(float)[:, None])
    return np.hstack(blocks_train), np.hstack(blocks_test)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--train", required=True)
    parser.add_argument("--test", required=True)
    parser.add_argument("--schema", required=True)
    args = parser.parse_args()
    try:
        schema = load_schema(args.schema)
        train = load_table(args.train, schema)
        test = load_table(args.test, schema)
        label = schema["label"]
        positive = schema.get("positive_label")
        if positive is None:
            raise ValueError("schema needs positive_label for classification")
        train = train[train[label].notna()]
        y_train = (train[label] == positive).to_numpy(int)
        y_test = (test[label] == positive).to_numpy(int)
        if y_train.min() == y_train.max():
            score = np.full(len(test), 0.5)
        else:
            x_train, x_test = featurize(train, test, schema)
            model = LogisticRegression(max_iter=2000)
            model.fit(x_train, y_train)
            score = model.predict_proba(x_test)[:, 1]
        print(json.dumps({"auc": float(roc_auc_score(y_test, score))}))
        return 0
    except Exception as exc:  # diagnostics belong on stderr, never stdout
        print(f"sklearn_pipeline: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
