"""Black-box ML pipeline contract with built-in implementations.

Built-ins are deliberately small and deterministic: imputation statistics and
standardization parameters come from training data only, logistic regression
uses zero-initialized full-batch gradient descent, the decision tree breaks
ties by feature index then threshold, and the conformal regressor is ridge
least squares. An external adapter runs any command that speaks the
train/test/schema file protocol.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

from . import metrics as M
from .data import CATEGORICAL, MISSING, NUMERIC, Dataset, write_csv, write_schema
from .rng import derive_seed


class PipelineError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Specs


@dataclass(frozen=True)
class Cleaner:
    kind: str = "none"  # none | mean_impute | median_impute | knn_impute
    k: int = 5

    def __post_init__(self):
        if self.kind not in ("none", "mean_impute", "median_impute", "knn_impute"):
            raise PipelineError(f"unknown cleaner {self.kind!r}")
        if self.kind == "knn_impute" and self.k < 1:
            raise PipelineError("knn_impute needs k >= 1")


@dataclass(frozen=True)
class LogisticRegressionSpec:
    l2: float = 1e-4
    lr: float = 0.1
    iters: int = 500


@dataclass(frozen=True)
class DecisionTreeSpec:
    max_depth: int = 5
    min_leaf: int = 5


@dataclass(frozen=True)
class SplitConformalSpec:
    alpha: float = 0.1
    calibration_fraction: float = 0.5
    ridge: float = 1e-6


ModelSpec = LogisticRegressionSpec | DecisionTreeSpec | SplitConformalSpec


@dataclass(frozen=True)
class PipelineSpec:
    cleaner: Cleaner
    model: ModelSpec
    task: str  # classification | regression

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise PipelineError(f"unknown task {self.task!r}")
        if isinstance(self.model, SplitConformalSpec) and self.task != "regression":
            raise PipelineError("split_conformal requires task=regression")
        if self.task == "regression" and not isinstance(self.model, SplitConformalSpec):
            raise PipelineError("regression currently uses the split_conformal model")


# ---------------------------------------------------------------------------
# Feature encoding (fit on train only)


class _Encoder:
    """One-hot categoricals, standardize numerics; MISSING maps to the train
    mean (numerics) or its own category (categoricals)."""

    def __init__(self):
        self.numeric_stats: dict[str, tuple[float, float]] = {}
        self.categories: dict[str, dict[str, int]] = {}
        self.features: list[str] = []
        self.width = 0

    def fit(self, train: Dataset) -> "_Encoder":
        schema = train.schema
        self.features = [a.name for a in schema.attributes if a.name != schema.label]
        offsets = 0
        for name in self.features:
            attr = schema.attribute(name)
            if attr.kind == NUMERIC:
                col = train.numeric_column(name)
                observed = col[~np.isnan(col)]
                mean = float(observed.mean()) if observed.size else 0.0
                std = float(observed.std()) if observed.size else 1.0
                self.numeric_stats[name] = (mean, std if std > 0 else 1.0)
                offsets += 1
            else:
                values = sorted({v for v in train.column(name) if v is not MISSING})
                if any(v is MISSING for v in train.column(name)):
                    values.append(MISSING)
                self.categories[name] = {v: i for i, v in enumerate(values)}
                offsets += max(len(values), 1)
        self.width = offsets
        return self

    def transform(self, dataset: Dataset) -> np.ndarray:
        n = len(dataset)
        out = np.zeros((n, self.width))
        col_at = 0
        for name in self.features:
            if name in self.numeric_stats:
                mean, std = self.numeric_stats[name]
                col = dataset.numeric_column(name)
                vals = np.where(np.isnan(col), mean, col)
                out[:, col_at] = (vals - mean) / std
                col_at += 1
            else:
                mapping = self.categories[name]
                for i, v in enumerate(dataset.column(name)):
                    j = mapping.get(v)
                    if j is not None:
                        out[i, col_at + j] = 1.0
                col_at += max(len(mapping), 1)
        return out


def _drop_missing_labels(dataset: Dataset) -> tuple[Dataset, int]:
    idx = dataset.schema.index(dataset.schema.label)
    keep = [i for i, row in enumerate(dataset.rows) if row[idx] is not MISSING]
    dropped = len(dataset) - len(keep)
    if dropped == 0:
        return dataset, 0
    return dataset.subset(keep), dropped


def _binary_labels(dataset: Dataset) -> np.ndarray:
    schema = dataset.schema
    if schema.positive_label is None:
        raise PipelineError("classification needs schema.positive_label")
    col = dataset.column(schema.label)
    return np.array([1.0 if v == schema.positive_label else 0.0 for v in col])


def _float_labels(dataset: Dataset) -> np.ndarray:
    col = dataset.numeric_column(dataset.schema.label)
    if np.isnan(col).any():
        raise PipelineError("regression label contains MISSING after filtering")
    return col


# ---------------------------------------------------------------------------
# Cleaners


class _SimpleImputer:
    """Mean/median for numerics, most frequent value for categoricals."""

    def __init__(self, strategy: str):
        self.strategy = strategy
        self.fill: dict[str, object] = {}

    def fit(self, train: Dataset) -> "_SimpleImputer":
        schema = train.schema
        for attr in schema.attributes:
            if attr.name == schema.label:
                continue
            if attr.kind == NUMERIC:
                col = train.numeric_column(attr.name)
                observed = col[~np.isnan(col)]
                if observed.size:
                    stat = np.mean(observed) if self.strategy == "mean" else np.median(observed)
                    self.fill[attr.name] = float(stat)
            else:
                counts: dict[str, int] = {}
                for v in train.column(attr.name):
                    if v is not MISSING:
                        counts[v] = counts.get(v, 0) + 1
                if counts:
                    best = min(counts, key=lambda v: (-counts[v], v))
                    self.fill[attr.name] = best
        return self

    def transform(self, dataset: Dataset) -> Dataset:
        schema = dataset.schema
        idx_fill = {schema.index(name): value for name, value in self.fill.items()}
        rows = []
        for row in dataset.rows:
            if any(row[i] is MISSING for i in idx_fill):
                row = tuple(
                    idx_fill[i] if cell is MISSING and i in idx_fill else cell
                    for i, cell in enumerate(row)
                )
            rows.append(row)
        return dataset.replace_rows(rows)


class _KnnImputer:
    """Donor search over standardized numerics (gaps mean-filled) plus 0/1
    categorical mismatch; ties broken by lowest donor row index."""

    def __init__(self, k: int):
        self.k = k
        self.train: Dataset | None = None
        self.num_names: list[str] = []
        self.cat_names: list[str] = []
        self.num_stats: dict[str, tuple[float, float]] = {}
        self.num_matrix: np.ndarray | None = None
        self.cat_columns: dict[str, np.ndarray] = {}

    def fit(self, train: Dataset) -> "_KnnImputer":
        schema = train.schema
        self.train = train
        feats = [a for a in schema.attributes if a.name != schema.label]
        self.num_names = [a.name for a in feats if a.kind == NUMERIC]
        self.cat_names = [a.name for a in feats if a.kind == CATEGORICAL]
        cols = []
        for name in self.num_names:
            col = train.numeric_column(name)
            observed = col[~np.isnan(col)]
            mean = float(observed.mean()) if observed.size else 0.0
            std = float(observed.std()) if observed.size else 1.0
            std = std if std > 0 else 1.0
            self.num_stats[name] = (mean, std)
            cols.append(np.where(np.isnan(col), 0.0, (col - mean) / std))
        self.num_matrix = np.column_stack(cols) if cols else np.zeros((len(train), 0))
        for name in self.cat_names:
            self.cat_columns[name] = np.array(
                [v if v is not MISSING else "\x00missing" for v in train.column(name)],
                dtype=object,
            )
        return self

    def _representation(self, dataset: Dataset) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        cols = []
        for name in self.num_names:
            mean, std = self.num_stats[name]
            col = dataset.numeric_column(name)
            cols.append(np.where(np.isnan(col), 0.0, (col - mean) / std))
        num = np.column_stack(cols) if cols else np.zeros((len(dataset), 0))
        cats = {
            name: np.array(
                [v if v is not MISSING else "\x00missing" for v in dataset.column(name)],
                dtype=object,
            )
            for name in self.cat_names
        }
        return num, cats

    def transform(self, dataset: Dataset) -> Dataset:
        assert self.train is not None
        schema = dataset.schema
        q_num, q_cat = self._representation(dataset)
        new_cells: dict[tuple[int, int], object] = {}
        for name in self.num_names + self.cat_names:
            col_idx = schema.index(name)
            queries = [i for i, row in enumerate(dataset.rows) if row[col_idx] is MISSING]
            if not queries:
                continue
            train_col = self.train.column(name)
            donors = np.array([j for j, v in enumerate(train_col) if v is not MISSING])
            if donors.size == 0:
                continue  # no donors anywhere; leave MISSING for the encoder
            d_num = self.num_matrix[donors]
            for i in queries:
                d2 = ((d_num - q_num[i]) ** 2).sum(axis=1)
                for cname in self.cat_names:
                    d2 = d2 + (self.cat_columns[cname][donors] != q_cat[cname][i])
                order = np.lexsort((donors, d2))[: self.k]
                chosen = donors[order]
                if schema.attribute(name).kind == NUMERIC:
                    new_cells[(i, col_idx)] = float(
                        np.mean([float(train_col[j]) for j in chosen])
                    )
                else:
                    votes: dict[str, int] = {}
                    for j in chosen:
                        votes[train_col[j]] = votes.get(train_col[j], 0) + 1
                    new_cells[(i, col_idx)] = min(votes, key=lambda v: (-votes[v], v))
        if not new_cells:
            return dataset
        rows = list(dataset.rows)
        for (i, j), value in new_cells.items():
            row = list(rows[i])
            row[j] = value
            rows[i] = tuple(row)
        return dataset.replace_rows(rows)


def _make_cleaner(spec: Cleaner):
    if spec.kind == "none":
        return None
    if spec.kind == "mean_impute":
        return _SimpleImputer("mean")
    if spec.kind == "median_impute":
        return _SimpleImputer("median")
    return _KnnImputer(spec.k)


# ---------------------------------------------------------------------------
# Predictors


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


class _LogisticModel:
    def __init__(self, spec: LogisticRegressionSpec):
        self.spec = spec
        self.w: np.ndarray | None = None
        self.b = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "_LogisticModel":
        n, d = X.shape
        w = np.zeros(d)
        b = 0.0
        for _ in range(self.spec.iters):
            err = _sigmoid(X @ w + b) - y
            w -= self.spec.lr * (X.T @ err / n + self.spec.l2 * w)
            b -= self.spec.lr * float(err.mean())
        self.w, self.b = w, b
        return self

    def scores(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(X @ self.w + self.b)


@dataclass
class _TreeNode:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None


def _gini(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    p = float(y.mean())
    return 2.0 * p * (1.0 - p)


class _TreeModel:
    def __init__(self, spec: DecisionTreeSpec):
        self.spec = spec
        self.root: _TreeNode | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "_TreeModel":
        self.root = self._build(X, y, depth=0)
        return self

    def _build(self, X: np.ndarray, y: np.ndarray, depth: int) -> _TreeNode:
        node = _TreeNode(value=float(y.mean()))
        n = len(y)
        if depth >= self.spec.max_depth or n < 2 * self.spec.min_leaf or _gini(y) == 0.0:
            return node
        best = None  # (impurity, feature, threshold, mask)
        for j in range(X.shape[1]):
            col = X[:, j]
            uniq = np.unique(col)
            if len(uniq) < 2:
                continue
            for t in (uniq[:-1] + uniq[1:]) / 2.0:  # midpoints between observed values
                left = col <= t
                n_left = int(left.sum())
                if n_left < self.spec.min_leaf or n - n_left < self.spec.min_leaf:
                    continue
                score = (n_left * _gini(y[left]) + (n - n_left) * _gini(y[~left])) / n
                if best is None or score < best[0] - 1e-15:
                    best = (score, j, float(t), left)
        if best is None or best[0] >= _gini(y) - 1e-15:
            return node
        _, j, t, left = best
        node.feature = j
        node.threshold = t
        node.left = self._build(X[left], y[left], depth + 1)
        node.right = self._build(X[~left], y[~left], depth + 1)
        return node

    def scores(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        for i, row in enumerate(X):
            node = self.root
            while node.left is not None:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.value
        return out


class _RidgeModel:
    def __init__(self, ridge: float):
        self.ridge = ridge
        self.w: np.ndarray | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "_RidgeModel":
        Xb = np.column_stack([X, np.ones(len(X))])
        gram = Xb.T @ Xb + self.ridge * np.eye(Xb.shape[1])
        self.w = np.linalg.solve(gram, Xb.T @ y)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([X, np.ones(len(X))]) @ self.w


class _ConstantModel:
    def __init__(self, value: float):
        self.value = value

    def scores(self, X: np.ndarray) -> np.ndarray:
        return np.full(len(X), self.value)


# ---------------------------------------------------------------------------
# Model facade


@dataclass
class Model:
    spec: PipelineSpec
    schema: object
    encoder: _Encoder
    predictor: object
    cleaner: object | None
    n_label_dropped: int = 0
    degenerate: bool = False
    conformal_q: float | None = None
    conformal_alpha: float | None = None

    def _features(self, dataset: Dataset) -> np.ndarray:
        cleaned = self.cleaner.transform(dataset) if self.cleaner is not None else dataset
        return self.encoder.transform(cleaned)

    def score_dataset(self, dataset: Dataset) -> np.ndarray:
        X = self._features(dataset)
        if isinstance(self.predictor, _RidgeModel):
            return self.predictor.predict(X)
        return self.predictor.scores(X)

    def score(self, row: tuple) -> float:
        return float(self.score_dataset(Dataset(self.schema, (row,)))[0])

    def interval_dataset(self, dataset: Dataset) -> list[tuple[float, float]]:
        if self.conformal_q is None:
            raise PipelineError("intervals require a split_conformal model")
        preds = self.score_dataset(dataset)
        q = self.conformal_q
        return [(float(p) - q, float(p) + q) for p in preds]

    def interval(self, row: tuple) -> tuple[float, float]:
        return self.interval_dataset(Dataset(self.schema, (row,)))[0]


def conformal_quantile(residuals: np.ndarray, alpha: float) -> float:
    """ceil((n+1)(1-alpha))-th smallest absolute residual; inf if beyond n."""
    n = len(residuals)
    if n == 0:
        raise PipelineError("calibration set is empty")
    k = math.ceil((n + 1) * (1.0 - alpha))
    if k > n:
        return math.inf
    return float(np.sort(np.abs(residuals))[k - 1])


def conformal_interval(model: Model, row: tuple) -> tuple[float, float]:
    return model.interval(row)


def train(spec: PipelineSpec, train_data: Dataset, seed: int) -> Model:
    """Fit the pipeline; deterministic for a fixed seed.

    Rows with a MISSING label are dropped (the count is recorded on the
    model). The seed only affects the conformal calibration split; the other
    built-ins are deterministic by construction.
    """
    if len(train_data) == 0:
        raise PipelineError("empty training data")
    schema = train_data.schema
    label_kind = schema.attribute(schema.label).kind
    if spec.task == "classification" and label_kind != CATEGORICAL:
        raise PipelineError("classification needs a categorical label")
    if spec.task == "regression" and label_kind != NUMERIC:
        raise PipelineError("regression needs a numeric label")

    data, dropped = _drop_missing_labels(train_data)
    if len(data) == 0:
        raise PipelineError("all training rows dropped (missing labels)")

    if isinstance(spec.model, SplitConformalSpec):
        model = _train_conformal(spec, data, seed)
        model.n_label_dropped = dropped
        return model

    cleaner = _make_cleaner(spec.cleaner)
    if cleaner is not None:
        cleaner.fit(data)
        cleaned = cleaner.transform(data)
    else:
        cleaned = data
    encoder = _Encoder().fit(cleaned)
    X = encoder.transform(cleaned)
    y = _binary_labels(cleaned)

    if y.min() == y.max():
        predictor: object = _ConstantModel(float(y.mean()))
        degenerate = True
    else:
        degenerate = False
        if isinstance(spec.model, LogisticRegressionSpec):
            predictor = _LogisticModel(spec.model).fit(X, y)
        else:
            predictor = _TreeModel(spec.model).fit(X, y)

    return Model(spec, schema, encoder, predictor, cleaner, dropped, degenerate)


def _train_conformal(spec: PipelineSpec, data: Dataset, seed: int) -> Model:
    conf: SplitConformalSpec = spec.model
    n = len(data)
    rng = np.random.default_rng(derive_seed(seed, "conformal-split"))
    perm = rng.permutation(n)
    n_cal = int(round(conf.calibration_fraction * n))
    if n_cal == 0 or n_cal == n:
        raise PipelineError("calibration split leaves an empty side")
    cal_idx = sorted(int(i) for i in perm[:n_cal])
    fit_idx = sorted(int(i) for i in perm[n_cal:])
    proper = data.subset(fit_idx)
    calib = data.subset(cal_idx)

    cleaner = _make_cleaner(spec.cleaner)
    if cleaner is not None:
        cleaner.fit(proper)
        proper_clean = cleaner.transform(proper)
    else:
        proper_clean = proper
    encoder = _Encoder().fit(proper_clean)
    ridge = _RidgeModel(conf.ridge).fit(encoder.transform(proper_clean), _float_labels(proper_clean))

    calib_clean = cleaner.transform(calib) if cleaner is not None else calib
    residuals = _float_labels(calib_clean) - ridge.predict(encoder.transform(calib_clean))
    qhat = conformal_quantile(residuals, conf.alpha)

    return Model(spec, data.schema, encoder, ridge, cleaner, 0, False, qhat, conf.alpha)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(
    spec: PipelineSpec,
    train_data: Dataset,
    test_data: Dataset,
    objective: M.Objective,
    seed: int,
    group: M.GroupSpec | None = None,
) -> float:
    """Train on (possibly corrupted) train data, measure the raw metric on test."""
    model = train(spec, train_data, seed)
    return evaluate_model(model, test_data, objective, group)


def evaluate_model(
    model: Model,
    test_data: Dataset,
    objective: M.Objective,
    group: M.GroupSpec | None = None,
) -> float:
    test, _ = _drop_missing_labels(test_data)
    if len(test) == 0:
        raise PipelineError("empty test data")
    name = objective.name
    if name == "coverage":
        return M.coverage(model.interval_dataset(test), _float_labels(test))
    if name == "mse":
        return M.mse(model.score_dataset(test), _float_labels(test))
    scores = model.score_dataset(test)
    labels = _binary_labels(test)
    if name == "auc":
        return M.auc(scores, labels)
    preds = scores >= objective.threshold
    if name == "f1":
        return M.f1(preds, labels)
    if group is None:
        raise PipelineError(f"objective {name} needs a GroupSpec")
    groups = np.array([v == group.privileged for v in test.column(group.attribute)])
    if name == "spd":
        return M.spd(preds, groups)
    return M.eo(preds, labels, groups)


# ---------------------------------------------------------------------------
# External pipelines


class ExternalPipelineError(RuntimeError):
    pass


class ExternalProcessError(ExternalPipelineError):
    pass


class ExternalTimeoutError(ExternalPipelineError):
    pass


class ExternalProtocolError(ExternalPipelineError):
    pass


@dataclass(frozen=True)
class ExternalPipeline:
    command: tuple[str, ...]
    timeout: float = 600.0
    metric_key: str = "auc"


def external_evaluate(
    ext: ExternalPipeline,
    train_data: Dataset,
    test_data: Dataset,
    work_dir: str | Path | None = None,
) -> float:
    """Exchange CSVs with an untrusted child process and read back one metric.

    The child is invoked as ``<command> --train T.csv --test E.csv --schema
    S.json`` inside a fresh run-scoped directory and must print exactly one
    JSON object on stdout.
    """
    with tempfile.TemporaryDirectory(prefix="stress-ext-", dir=work_dir) as tmp:
        tmp_path = Path(tmp)
        train_path = tmp_path / "train.csv"
        test_path = tmp_path / "test.csv"
        schema_path = tmp_path / "schema.json"
        write_csv(train_data, train_path)
        write_csv(test_data, test_path)
        write_schema(train_data.schema, schema_path)
        argv = list(ext.command) + [
            "--train", str(train_path),
            "--test", str(test_path),
            "--schema", str(schema_path),
        ]
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=ext.timeout
            )
        except subprocess.TimeoutExpired as exc:
            raise ExternalTimeoutError(
                f"external pipeline exceeded {ext.timeout}s: {argv[0]}"
            ) from exc
        if proc.stderr:
            logger.debug("external pipeline stderr: %s", proc.stderr.strip())
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-5:]
            raise ExternalProcessError(
                f"external pipeline exited {proc.returncode}: " + " | ".join(tail)
            )
        try:
            doc = json.loads(proc.stdout.strip())
        except json.JSONDecodeError as exc:
            raise ExternalProtocolError(f"stdout is not a JSON object: {exc}") from exc
        if not isinstance(doc, dict) or ext.metric_key not in doc:
            raise ExternalProtocolError(f"response lacks metric key {ext.metric_key!r}")
        value = doc[ext.metric_key]
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ExternalProtocolError(f"metric {ext.metric_key!r} is not a finite number")
        return float(value)
