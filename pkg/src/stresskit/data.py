"""Typed tabular datasets: schema, CSV ingestion, deterministic splits.

Cells are floats (numeric attributes), strings (categorical attributes), or
the MISSING sentinel. Datasets are immutable after construction and safe to
share across concurrent evaluations.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class _MissingType:
    """Singleton sentinel for a missing cell (empty cell / '?' on disk)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __deepcopy__(self, memo):
        return self

    def __copy__(self):
        return self


MISSING = _MissingType()

Cell = object  # float | str | MISSING


class DataError(ValueError):
    """Schema violation or malformed input, with row/column location."""


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str  # NUMERIC or CATEGORICAL

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"unknown attribute kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]
    label: str
    sensitive: str | None = None
    positive_label: str | None = None

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise DataError("duplicate attribute names in schema")
        if self.label not in names:
            raise DataError(f"label {self.label!r} is not a declared attribute")
        if self.sensitive is not None and self.sensitive not in names:
            raise DataError(f"sensitive attribute {self.sensitive!r} not declared")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown attribute {name!r}") from None

    def attribute(self, name: str) -> Attribute:
        return self.attributes[self.index(name)]

    def to_json(self) -> dict:
        doc = {
            "attributes": [{"name": a.name, "kind": a.kind} for a in self.attributes],
            "label": self.label,
        }
        if self.sensitive is not None:
            doc["sensitive"] = self.sensitive
        if self.positive_label is not None:
            doc["positive_label"] = self.positive_label
        return doc

    @staticmethod
    def from_json(doc: dict) -> "Schema":
        attrs = tuple(Attribute(a["name"], a["kind"]) for a in doc["attributes"])
        return Schema(
            attributes=attrs,
            label=doc["label"],
            sensitive=doc.get("sensitive"),
            positive_label=doc.get("positive_label"),
        )


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    rows: tuple[tuple[Cell, ...], ...]
    _column_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        width = len(self.schema.attributes)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise DataError(f"row {i} has {len(row)} cells, schema has {width}")

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> tuple[Cell, ...]:
        idx = self.schema.index(name)
        return tuple(row[idx] for row in self.rows)

    def numeric_column(self, name: str) -> np.ndarray:
        """Numeric column as float array with NaN at MISSING cells (cached)."""
        if name not in self._column_cache:
            idx = self.schema.index(name)
            if self.schema.attributes[idx].kind != NUMERIC:
                raise DataError(f"attribute {name!r} is not numeric")
            arr = np.array(
                [math.nan if row[idx] is MISSING else float(row[idx]) for row in self.rows]
            )
            self._column_cache[name] = arr
        return self._column_cache[name]

    def replace_rows(self, rows: Iterable[tuple[Cell, ...]]) -> "Dataset":
        return Dataset(self.schema, tuple(rows))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.schema, tuple(self.rows[i] for i in indices))


@dataclass(frozen=True)
class SplitResult:
    train: Dataset
    test: Dataset
    seed: int


def _parse_cell(token: str, attr: Attribute, missing_token: str, where: str) -> Cell:
    if token == "" or token == missing_token:
        return MISSING
    if attr.kind == NUMERIC:
        try:
            value = float(token)
        except ValueError:
            raise DataError(f"unparseable numeric cell {token!r} at {where}") from None
        if not math.isfinite(value):
            raise DataError(f"non-finite numeric cell {token!r} at {where}")
        return value
    return token


def load_csv(path: str | Path, schema: Schema, missing_token: str = "?") -> Dataset:
    """Read an RFC 4180 CSV whose header matches the schema attribute order.

    Empty cells and ``missing_token`` parse to MISSING.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        expected = list(schema.names)
        if header != expected:
            raise DataError(f"{path}: header {header!r} does not match schema {expected!r}")
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(expected):
                raise DataError(
                    f"{path}: row at line {lineno} has {len(record)} cells, expected {len(expected)}"
                )
            row = tuple(
                _parse_cell(tok, attr, missing_token, f"{path}:{lineno}:{attr.name}")
                for tok, attr in zip(record, schema.attributes)
            )
            rows.append(row)
    return Dataset(schema, tuple(rows))


def _format_cell(cell: Cell) -> str:
    if cell is MISSING:
        return ""
    if isinstance(cell, (float, int)) and not isinstance(cell, bool):
        return repr(float(cell))  # shortest round-trip decimal
    return str(cell)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset so that load_csv round-trips every cell, MISSING included."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.schema.names)
        for row in dataset.rows:
            writer.writerow([_format_cell(c) for c in row])


def load_schema(path: str | Path) -> Schema:
    with Path(path).open(encoding="utf-8") as fh:
        return Schema.from_json(json.load(fh))


def write_schema(schema: Schema, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def split(dataset: Dataset, train_fraction: float, seed: int) -> SplitResult:
    """Seeded shuffled partition; |train| = round(train_fraction * N).

    Indices are permuted with numpy's PCG64 generator seeded by ``seed``, so
    identical inputs give byte-identical partitions.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction {train_fraction} outside (0, 1)")
    n = len(dataset)
    if n < 2:
        raise DataError("dataset too small to split (need at least 2 rows)")
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DataError(f"dataset too small for train_fraction={train_fraction} (N={n})")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = sorted(int(i) for i in perm[:n_train])
    test_idx = sorted(int(i) for i in perm[n_train:])
    return SplitResult(dataset.subset(train_idx), dataset.subset(test_idx), seed)
