"""Objective functions: AUC, F1, MSE, fairness gaps, conformal coverage.

All functions are pure. The optimizer always minimizes the normalized value
returned by Objective.normalize, so a single search implementation serves
both higher-is-better and lower-is-better metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIGHER = "higher_is_better"
LOWER = "lower_is_better"

_DIRECTIONS = {
    "auc": HIGHER,
    "f1": HIGHER,
    "coverage": HIGHER,
    "mse": LOWER,
    "spd": LOWER,
    "eo": LOWER,
}


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class Objective:
    name: str
    threshold: float = 0.5  # score binarization for f1/spd/eo

    def __post_init__(self):
        if self.name not in _DIRECTIONS:
            raise MetricError(f"unknown objective {self.name!r}; choose from {sorted(_DIRECTIONS)}")

    @property
    def direction(self) -> str:
        return _DIRECTIONS[self.name]

    def normalize(self, value: float) -> float:
        """Map a raw metric to the minimized quantity (lower = more adversarial)."""
        return value if self.direction == HIGHER else -value

    def denormalize(self, psi: float) -> float:
        return psi if self.direction == HIGHER else -psi


@dataclass(frozen=True)
class GroupSpec:
    attribute: str
    privileged: str


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _as_bool(x) -> np.ndarray:
    return np.asarray(x).astype(bool)


def auc(scores, labels) -> float:
    """Rank-based Mann-Whitney AUC with 0.5 credit per tied pair."""
    s = _as_float(scores)
    y = _as_bool(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels must have equal length")
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))  # average rank, 1-based
        i = j + 1
    u = float(ranks[y].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def f1(predictions, labels) -> float:
    """2PR/(P+R); any 0/0 resolves to 0."""
    p = _as_bool(predictions)
    y = _as_bool(labels)
    if p.shape != y.shape:
        raise MetricError("predictions and labels must have equal length")
    tp = float(np.sum(p & y))
    fp = float(np.sum(p & ~y))
    fn = float(np.sum(~p & y))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2 * tp / denom


def spd(predictions, groups) -> float:
    """|P(pred=1 | privileged) - P(pred=1 | unprivileged)|."""
    p = _as_bool(predictions)
    g = _as_bool(groups)
    if p.shape != g.shape:
        raise MetricError("predictions and groups must have equal length")
    if not g.any() or g.all():
        raise MetricError("SPD needs both groups non-empty")
    return abs(float(p[g].mean()) - float(p[~g].mean()))


def eo(predictions, labels, groups) -> float:
    """|TPR_privileged - TPR_unprivileged| (equal opportunity gap)."""
    p = _as_bool(predictions)
    y = _as_bool(labels)
    g = _as_bool(groups)
    if not (p.shape == y.shape == g.shape):
        raise MetricError("predictions, labels, groups must have equal length")
    pos_priv = y & g
    pos_unpriv = y & ~g
    if not pos_priv.any() or not pos_unpriv.any():
        raise MetricError("EO needs positive-label rows in both groups")
    return abs(float(p[pos_priv].mean()) - float(p[pos_unpriv].mean()))


def mse(predictions, labels) -> float:
    p = _as_float(predictions)
    y = _as_float(labels)
    if p.shape != y.shape or len(p) == 0:
        raise MetricError("predictions and labels must be non-empty and equal length")
    return float(np.mean((p - y) ** 2))


def coverage(intervals, labels) -> float:
    """Fraction of labels inside their closed interval."""
    y = _as_float(labels)
    if len(intervals) != len(y) or len(y) == 0:
        raise MetricError("intervals and labels must be non-empty and equal length")
    lo = _as_float([iv[0] for iv in intervals])
    hi = _as_float([iv[1] for iv in intervals])
    return float(np.mean((lo <= y) & (y <= hi)))
