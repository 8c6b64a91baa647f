"""Pattern-gated corruption mechanisms over tabular data.

A CorruptionTemplate fixes an error type (missing values, label errors, or
selection bias) and the attribute set of its gating pattern, leaving bounds
and the corruption probability as a parameter box. Binding parameters yields
a DCP, whose application is a pure function of (dcp, dataset, seed): per-row
noise comes from a counter-based hash, so repeated applications are
reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import MISSING, NUMERIC, Cell, Dataset, Schema
from .rng import derive_seed, noise_vector


class CorruptionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Error types


@dataclass(frozen=True)
class MissingValue:
    """Blank out a target attribute (a feature, or the label itself)."""

    target: str


@dataclass(frozen=True)
class LabelError:
    """Flip (binary) or redistribute (multi-class) the label."""

    classes: tuple[str, ...]


@dataclass(frozen=True)
class SelectionBias:
    """Drop matching tuples entirely."""


ErrorType = MissingValue | LabelError | SelectionBias


def error_kind(error_type: ErrorType) -> str:
    if isinstance(error_type, MissingValue):
        return "missing_value"
    if isinstance(error_type, LabelError):
        return "label_error"
    return "selection_bias"


def corrupted_attribute(error_type: ErrorType, schema: Schema) -> str | None:
    """Attribute whose cells the mechanism rewrites; None for selection bias."""
    if isinstance(error_type, MissingValue):
        return error_type.target
    if isinstance(error_type, LabelError):
        return schema.label
    return None


def noise_stream(error_type: ErrorType, schema: Schema) -> int:
    attr = corrupted_attribute(error_type, schema)
    if attr is None:
        return len(schema.attributes)  # selection node, one past the last attribute
    return schema.index(attr)


# ---------------------------------------------------------------------------
# Patterns


@dataclass(frozen=True)
class RangeCondition:
    attribute: str
    lower: Cell | None = None
    upper: Cell | None = None

    def __post_init__(self):
        if self.lower is None and self.upper is None:
            raise CorruptionError(f"condition on {self.attribute!r} has no bounds")


@dataclass(frozen=True)
class Pattern:
    conditions: tuple[RangeCondition, ...]

    def __post_init__(self):
        attrs = [c.attribute for c in self.conditions]
        if len(set(attrs)) != len(attrs):
            raise CorruptionError("pattern has multiple conditions on one attribute")
        if not attrs:
            raise CorruptionError("pattern must constrain at least one attribute")

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(c.attribute for c in self.conditions)


def _equality_value(cond: RangeCondition) -> Cell:
    if cond.lower != cond.upper or cond.lower is None:
        raise CorruptionError(
            f"categorical condition on {cond.attribute!r} must be an equality (lower == upper)"
        )
    return cond.lower


def _numeric_holds(cond: RangeCondition, value: float) -> bool:
    if cond.lower is not None and not value >= float(cond.lower):
        return False
    if cond.upper is not None and not value <= float(cond.upper):
        return False
    return True


def pattern_matches(pattern: Pattern, row: tuple[Cell, ...], schema: Schema) -> bool:
    for cond in pattern.conditions:
        idx = schema.index(cond.attribute)
        value = row[idx]
        if value is MISSING:
            return False  # missing evidence never satisfies a range condition
        if schema.attributes[idx].kind == NUMERIC:
            if not _numeric_holds(cond, float(value)):
                return False
        elif value != _equality_value(cond):
            return False
    return True


def pattern_mask(pattern: Pattern, dataset: Dataset) -> np.ndarray:
    """Boolean row mask; vectorized equivalent of pattern_matches per row."""
    n = len(dataset)
    mask = np.ones(n, dtype=bool)
    for cond in pattern.conditions:
        attr = dataset.schema.attribute(cond.attribute)
        if attr.kind == NUMERIC:
            col = dataset.numeric_column(cond.attribute)
            ok = ~np.isnan(col)
            if cond.lower is not None:
                ok &= col >= float(cond.lower)
            if cond.upper is not None:
                ok &= col <= float(cond.upper)
        else:
            wanted = _equality_value(cond)
            values = dataset.column(cond.attribute)
            ok = np.fromiter(
                (v is not MISSING and v == wanted for v in values), dtype=bool, count=n
            )
        mask &= ok
    return mask


# ---------------------------------------------------------------------------
# Parameter space and templates


@dataclass(frozen=True)
class FloatParam:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
            raise CorruptionError(f"invalid float parameter bounds [{self.lo}, {self.hi}]")

    def contains(self, value) -> bool:
        return isinstance(value, (int, float)) and self.lo <= value <= self.hi


@dataclass(frozen=True)
class ChoiceParam:
    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise CorruptionError("choice parameter with no values")

    def contains(self, value) -> bool:
        return value in self.values


ParameterSpace = dict[str, FloatParam | ChoiceParam]

P_KEY = "p"


def lower_key(attr: str) -> str:
    return f"lo:{attr}"


def width_key(attr: str) -> str:
    return f"w:{attr}"


def equals_key(attr: str) -> str:
    return f"eq:{attr}"


def weight_key(cls: str) -> str:
    return f"q:{cls}"


@dataclass(frozen=True)
class CorruptionTemplate:
    error_type: ErrorType
    pattern_attributes: tuple[str, ...]
    parameter_space: ParameterSpace

    def __post_init__(self):
        if not self.pattern_attributes:
            raise CorruptionError("template needs a non-empty pattern attribute set")
        if P_KEY not in self.parameter_space:
            raise CorruptionError("parameter space must include the corruption probability")

    def key(self) -> str:
        """Stable identifier used for seed derivation and deduplication."""
        attrs = ",".join(sorted(self.pattern_attributes))
        et = self.error_type
        if isinstance(et, MissingValue):
            tag = f"mv:{et.target}"
        elif isinstance(et, LabelError):
            tag = "le"
        else:
            tag = "sb"
        return f"{tag}|{attrs}"


def template_for(
    dataset: Dataset,
    error_type: ErrorType,
    pattern_attributes: tuple[str, ...],
    p_max: float = 1.0,
) -> CorruptionTemplate:
    """Build a template whose box spans the observed data ranges.

    Numeric pattern attributes get (lower, width) parameters so every point of
    the box is a valid interval; categorical attributes get their observed
    value set; multi-class label errors get one weight per class.
    """
    schema = dataset.schema
    space: ParameterSpace = {P_KEY: FloatParam(0.0, p_max)}
    for name in pattern_attributes:
        attr = schema.attribute(name)
        if attr.kind == NUMERIC:
            col = dataset.numeric_column(name)
            observed = col[~np.isnan(col)]
            if observed.size == 0:
                raise CorruptionError(f"attribute {name!r} has no observed values")
            lo, hi = float(observed.min()), float(observed.max())
            space[lower_key(name)] = FloatParam(lo, hi)
            space[width_key(name)] = FloatParam(0.0, hi - lo)
        else:
            values = sorted({v for v in dataset.column(name) if v is not MISSING})
            if not values:
                raise CorruptionError(f"attribute {name!r} has no observed values")
            space[equals_key(name)] = ChoiceParam(tuple(values))
    if isinstance(error_type, LabelError) and len(error_type.classes) > 2:
        for cls in error_type.classes:
            space[weight_key(cls)] = FloatParam(0.0, 1.0)
    if isinstance(error_type, MissingValue) and error_type.target not in schema.names:
        raise CorruptionError(f"missing-value target {error_type.target!r} not in schema")
    return CorruptionTemplate(error_type, tuple(pattern_attributes), space)


# ---------------------------------------------------------------------------
# DCP


@dataclass(frozen=True)
class DCP:
    template: CorruptionTemplate
    theta: dict
    pattern: Pattern
    p: float

    def class_weights(self) -> tuple[float, ...] | None:
        et = self.template.error_type
        if not isinstance(et, LabelError) or len(et.classes) <= 2:
            return None
        raw = np.array([float(self.theta[weight_key(c)]) for c in et.classes])
        total = raw.sum()
        if total <= 0:
            return tuple(np.full(len(et.classes), 1.0 / len(et.classes)))
        return tuple(raw / total)

    def to_json(self) -> dict:
        doc = {
            "error_type": {"kind": error_kind(self.template.error_type)},
            "pattern_attributes": list(self.template.pattern_attributes),
            "pattern": [
                {"attribute": c.attribute, "lower": c.lower, "upper": c.upper}
                for c in self.pattern.conditions
            ],
            "p": self.p,
            "theta": dict(self.theta),
        }
        et = self.template.error_type
        if isinstance(et, MissingValue):
            doc["error_type"]["target"] = et.target
        elif isinstance(et, LabelError):
            doc["error_type"]["classes"] = list(et.classes)
            weights = self.class_weights()
            if weights is not None:
                doc["error_type"]["sub_intervals"] = list(weights)
        return doc


def dcp_from_json(doc: dict, dataset: Dataset) -> DCP:
    et_doc = doc["error_type"]
    kind = et_doc["kind"]
    if kind == "missing_value":
        error_type: ErrorType = MissingValue(et_doc["target"])
    elif kind == "label_error":
        error_type = LabelError(tuple(et_doc["classes"]))
    elif kind == "selection_bias":
        error_type = SelectionBias()
    else:
        raise CorruptionError(f"unknown error type {kind!r}")
    template = template_for(dataset, error_type, tuple(doc["pattern_attributes"]))
    return instantiate(template, dict(doc["theta"]))


def instantiate(template: CorruptionTemplate, theta: dict) -> DCP:
    """Bind parameters: numeric conditions become [lower, lower + width]."""
    space = template.parameter_space
    for name, param in space.items():
        if name not in theta:
            raise CorruptionError(f"theta missing parameter {name!r}")
        if not param.contains(theta[name]):
            raise CorruptionError(f"theta[{name!r}]={theta[name]!r} outside parameter space")
    extra = set(theta) - set(space)
    if extra:
        raise CorruptionError(f"theta has unknown parameters {sorted(extra)}")
    conditions = []
    for attr in template.pattern_attributes:
        if lower_key(attr) in space:
            lo = float(theta[lower_key(attr)])
            width = float(theta[width_key(attr)])
            conditions.append(RangeCondition(attr, lo, lo + width))
        else:
            value = theta[equals_key(attr)]
            conditions.append(RangeCondition(attr, value, value))
    return DCP(
        template=template,
        theta=dict(theta),
        pattern=Pattern(tuple(conditions)),
        p=float(theta[P_KEY]),
    )


# ---------------------------------------------------------------------------
# Application


@dataclass(frozen=True)
class CorruptedDataset:
    dataset: Dataset
    kept_indices: tuple[int, ...]
    corrupted_cells: frozenset  # (original row index, attribute name)

    @property
    def n_corrupted_rows(self) -> int:
        rows = {i for i, _ in self.corrupted_cells}
        return len(rows)


def _fired_mask(dcp: DCP, dataset: Dataset, seed: int) -> np.ndarray:
    n = len(dataset)
    if dcp.p <= 0.0 or n == 0:
        return np.zeros(n, dtype=bool)
    mask = pattern_mask(dcp.pattern, dataset)
    stream = noise_stream(dcp.template.error_type, dataset.schema)
    u = noise_vector(seed, np.arange(n, dtype=np.uint64), stream)
    return mask & (u <= dcp.p)


def apply(dcp: DCP, dataset: Dataset, seed: int) -> CorruptedDataset:
    """Apply the mechanism; non-matching tuples pass through unchanged.

    Pattern conditions always read pre-corruption values (corrupted attributes
    are sinks in the dependency graph, so no pattern may depend on them).
    """
    schema = dataset.schema
    et = dcp.template.error_type
    n = len(dataset)
    fired = _fired_mask(dcp, dataset, seed)

    if isinstance(et, SelectionBias):
        kept = tuple(int(i) for i in np.flatnonzero(~fired))
        return CorruptedDataset(dataset.subset(kept), kept, frozenset())

    target = corrupted_attribute(et, schema)
    t_idx = schema.index(target)
    rows = list(dataset.rows)
    cells = set()

    if isinstance(et, MissingValue):
        for i in np.flatnonzero(fired):
            row = list(rows[i])
            row[t_idx] = MISSING
            rows[i] = tuple(row)
            cells.add((int(i), target))
    else:  # LabelError
        classes = et.classes
        weights = dcp.class_weights()
        if weights is not None:
            cuts = np.cumsum(weights)
            stream = noise_stream(et, schema)
            u = noise_vector(seed, np.arange(n, dtype=np.uint64), stream)
        for i in np.flatnonzero(fired):
            current = rows[i][t_idx]
            if current is MISSING:
                continue  # nothing to flip
            if weights is None:
                if current not in classes:
                    raise CorruptionError(f"label {current!r} outside declared classes")
                new = classes[1] if current == classes[0] else classes[0]
            else:
                r = u[i] / dcp.p
                j = min(int(np.searchsorted(cuts, r, side="left")), len(classes) - 1)
                new = classes[j]
            row = list(rows[i])
            row[t_idx] = new
            rows[i] = tuple(row)
            cells.add((int(i), target))

    kept = tuple(range(n))
    return CorruptedDataset(dataset.replace_rows(rows), kept, frozenset(cells))


def apply_stack(dcps, dataset: Dataset, seed: int) -> CorruptedDataset:
    """Apply DCPs sequentially (compound mechanisms); later patterns read the
    output of earlier stages. Indices and cell locations refer to the source."""
    current = dataset
    original = list(range(len(dataset)))
    all_cells: set = set()
    for stage, dcp in enumerate(dcps):
        result = apply(dcp, current, derive_seed(seed, "stack", stage))
        all_cells |= {(original[i], a) for i, a in result.corrupted_cells}
        original = [original[i] for i in result.kept_indices]
        current = result.dataset
    return CorruptedDataset(current, tuple(original), frozenset(all_cells))


def expected_fraction(dcp: DCP, dataset: Dataset) -> float:
    """p * |matching tuples| / N, computed exactly."""
    n = len(dataset)
    if n == 0:
        return 0.0
    matches = int(pattern_mask(dcp.pattern, dataset).sum())
    return min(1.0, dcp.p) * matches / n


def project_to_budget(dcp: DCP, dataset: Dataset, budget: float) -> DCP:
    """Scale p down so the expected corrupted fraction never exceeds budget."""
    if budget < 0:
        raise CorruptionError(f"budget {budget} must be non-negative")
    frac = expected_fraction(dcp, dataset)
    if frac <= budget:
        return dcp
    n = len(dataset)
    matches = int(pattern_mask(dcp.pattern, dataset).sum())
    p_new = min(1.0, budget * n / matches)
    while p_new > 0 and min(1.0, p_new) * matches / n > budget:
        p_new = math.nextafter(p_new, 0.0)  # undo float round-up
    theta = dict(dcp.theta)
    theta[P_KEY] = p_new
    return instantiate(dcp.template, theta)
