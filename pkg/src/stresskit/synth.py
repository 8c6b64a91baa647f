"""Synthetic benchmark datasets with known structure.

These generators back the test suite and the demo scripts: a census-style
classification table with one dominant feature, a table with a planted
vulnerable subpopulation, and a moderate-signal regression table.
"""

from __future__ import annotations

import numpy as np

from .data import Attribute, CATEGORICAL, Dataset, NUMERIC, Schema


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def make_adult_like(
    n: int, seed: int, intercept: float = -0.4, self_made_rate: float = 0.18
) -> Dataset:
    """Census-style binary classification.

    Education and a correlated capital proxy carry the main signal, and a
    self-made minority earns the positive label with low recorded education.
    Blanking education inside a high-education positive subpopulation makes
    mean imputation pile those rows onto the center while the self-made rows
    keep testifying that low education earns, flipping the learned sign; the
    intercept controls the positive rate and self_made_rate the size of the
    low-education positive minority.
    """
    rng = np.random.default_rng(seed)
    education = rng.integers(1, 17, n).astype(float)
    edu_std = (education - 8.5) / 4.6
    capital = 0.9 * edu_std + np.sqrt(1 - 0.9**2) * rng.normal(0, 1, n)
    age = rng.integers(18, 71, n).astype(float)
    hours = rng.integers(20, 61, n).astype(float)
    workclass = rng.choice(["private", "gov", "self"], n, p=[0.7, 0.2, 0.1])
    sex = rng.choice(["Male", "Female"], n)
    region = rng.choice(["north", "south", "east", "west"], n)
    children = rng.integers(0, 5, n).astype(float)
    z = (
        1.1 * edu_std
        + 0.9 * capital
        + 0.25 * (age - 44.0) / 15.0
        + 0.2 * (hours - 40.0) / 12.0
        + 0.15 * (sex == "Male")
        + intercept
    )
    y = rng.random(n) < _sigmoid(z)
    self_made = rng.random(n) < self_made_rate
    education = np.where(self_made, rng.integers(1, 7, n).astype(float), education)
    capital = np.where(self_made, 0.5 * rng.normal(0, 1, n), capital)
    y = np.where(self_made, True, y)
    schema = Schema(
        attributes=(
            Attribute("education_num", NUMERIC),
            Attribute("capital", NUMERIC),
            Attribute("age", NUMERIC),
            Attribute("hours", NUMERIC),
            Attribute("children", NUMERIC),
            Attribute("workclass", CATEGORICAL),
            Attribute("sex", CATEGORICAL),
            Attribute("region", CATEGORICAL),
            Attribute("income", CATEGORICAL),
        ),
        label="income",
        sensitive="sex",
        positive_label=">50K",
    )
    rows = tuple(
        (float(education[i]), float(capital[i]), float(age[i]), float(hours[i]),
         float(children[i]), str(workclass[i]), str(sex[i]), str(region[i]),
         ">50K" if y[i] else "<=50K")
        for i in range(n)
    )
    return Dataset(schema, rows)


def make_fixture(n: int = 2000, seed: int = 7) -> Dataset:
    """Shared low-positive-rate fixture: within a 25% error budget, label
    flips and selection bias can nearly exhaust the positive class, while
    missing values cannot remove rows, mirroring the error-type severity gap.
    No self-made minority, so imputation attacks stay bounded."""
    return make_adult_like(n, seed, intercept=-2.4, self_made_rate=0.0)


def make_planted(n: int, seed: int) -> Dataset:
    """Binary classification with one provably most-vulnerable subpopulation.

    Inside the 'core' group the label follows x1 plus a correlated partner
    x1b, and a self-made minority earns the label with low x1; elsewhere x1
    and x1b are uninformative noise. Blanking x1 for high-x1 core positives
    is therefore the uniquely damaging corruption: outside core the budget is
    wasted, without the label gate masked negatives cancel the flip, and
    without the x1 window the low-x1 witnesses get masked too.
    """
    rng = np.random.default_rng(seed)
    in_core = rng.random(n) < 0.6
    x1 = rng.normal(0, 1, n)
    z = 2.2 * x1 - 0.8
    y = np.where(in_core, rng.random(n) < _sigmoid(z), rng.random(n) < 0.2)
    self_made = in_core & (rng.random(n) < 0.08)
    x1 = np.where(self_made, rng.normal(-2.2, 0.3, n), x1)
    y = np.where(self_made, True, y)
    x2 = rng.normal(0, 1, n)
    filler = rng.choice(["a", "b"], n)
    group = np.where(in_core, "core", "other")
    schema = Schema(
        attributes=(
            Attribute("x1", NUMERIC),
            Attribute("x2", NUMERIC),
            Attribute("grp", CATEGORICAL),
            Attribute("filler", CATEGORICAL),
            Attribute("label", CATEGORICAL),
        ),
        label="label",
        positive_label="yes",
    )
    rows = tuple(
        (float(x1[i]), float(x2[i]), str(group[i]), str(filler[i]),
         "yes" if y[i] else "no")
        for i in range(n)
    )
    return Dataset(schema, rows)


def make_regression(n: int, seed: int, noise: float = 2.0) -> Dataset:
    """Linear-signal regression with deliberately moderate R^2, so label
    tails align with large residuals."""
    rng = np.random.default_rng(seed)
    x1 = rng.normal(0, 1, n)
    x2 = rng.normal(0, 1, n)
    x3 = rng.normal(0, 1, n)
    y = 1.5 * x1 + 1.0 * x2 + 0.5 * x3 + rng.normal(0, noise, n)
    schema = Schema(
        attributes=(
            Attribute("x1", NUMERIC),
            Attribute("x2", NUMERIC),
            Attribute("x3", NUMERIC),
            Attribute("y", NUMERIC),
        ),
        label="y",
    )
    rows = tuple((float(x1[i]), float(x2[i]), float(x3[i]), float(y[i])) for i in range(n))
    return Dataset(schema, rows)


def make_separable(n: int = 40) -> Dataset:
    """Tiny linearly separable toy set (no randomness)."""
    schema = Schema(
        attributes=(
            Attribute("u", NUMERIC),
            Attribute("v", NUMERIC),
            Attribute("label", CATEGORICAL),
        ),
        label="label",
        positive_label="pos",
    )
    rows = []
    for i in range(n):
        offset = (i % (n // 2)) / float(n)
        if i < n // 2:
            rows.append((1.0 + offset, 1.0 - offset, "pos"))
        else:
            rows.append((-1.0 - offset, -1.0 + offset, "neg"))
    return Dataset(schema, tuple(rows))
