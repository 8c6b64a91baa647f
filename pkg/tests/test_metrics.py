import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stresskit.metrics import (
    GroupSpec,
    MetricError,
    Objective,
    auc,
    coverage,
    eo,
    f1,
    mse,
    spd,
)


def auc_pair_counting(scores, labels):
    """O(n^2) oracle: fraction of positive/negative pairs correctly ordered,
    half credit for ties."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_worked_example(self):
        # 3 of 4 pos/neg pairs correctly ordered
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_perfect_ordering(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties_half(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.2], [1, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=0, max_value=10**9))
    def test_matches_pair_counting_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 200))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.choice([0.1, 0.25, 0.5, 0.8, rng.random()], size=n)
        assert auc(scores, labels) == pytest.approx(auc_pair_counting(scores, labels), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10**9))
    def test_complement_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 100))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.normal(size=n).round(1)  # rounding forces ties
        assert auc(scores, labels) + auc(-scores, labels) == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10**9))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 100))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.normal(size=n)
        transformed = np.exp(2.0 * scores) + 3.0
        assert auc(scores, labels) == pytest.approx(auc(transformed, labels), abs=1e-12)


class TestF1:
    def test_perfect(self):
        assert f1([1, 0, 1], [1, 0, 1]) == 1.0

    def test_confusion_arithmetic(self):
        # TP=1, FP=1, FN=1 -> precision=recall=0.5
        assert f1([1, 1, 0], [1, 0, 1]) == pytest.approx(0.5)

    def test_no_predicted_positives(self):
        assert f1([0, 0, 0], [1, 1, 0]) == 0.0

    def test_zero_over_zero_convention(self):
        assert f1([0, 0], [0, 0]) == 0.0


class TestSpd:
    def test_equal_rates(self):
        assert spd([1, 0, 1, 0], [1, 1, 0, 0]) == 0.0

    def test_rate_gap(self):
        # privileged rate 0.8 (4/5), unprivileged 0.3 (but with 10 rows: 3/5 vs 0.8)
        preds = [1, 1, 1, 1, 0, 1, 0, 0, 1, 1]
        groups = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
        gap = abs(4 / 5 - 3 / 5)
        assert spd(preds, groups) == pytest.approx(gap)

    def test_all_positive(self):
        assert spd([1, 1, 1, 1], [1, 1, 0, 0]) == 0.0

    def test_empty_group(self):
        with pytest.raises(MetricError):
            spd([1, 0], [1, 1])


class TestEo:
    def test_identical_tprs(self):
        preds = [1, 0, 1, 0]
        labels = [1, 1, 1, 1]
        groups = [1, 1, 0, 0]
        assert eo(preds, labels, groups) == 0.0

    def test_tpr_gap(self):
        # privileged TPR 1.0 (2/2), unprivileged 0.5 (1/2)
        preds = [1, 1, 1, 0, 0, 0]
        labels = [1, 1, 1, 1, 0, 0]
        groups = [1, 1, 0, 0, 1, 0]
        assert eo(preds, labels, groups) == pytest.approx(0.5)

    def test_predictions_equal_labels(self):
        labels = [1, 0, 1, 0]
        groups = [1, 1, 0, 0]
        assert eo(labels, labels, groups) == 0.0

    def test_group_without_positives(self):
        with pytest.raises(MetricError):
            eo([1, 1], [1, 0], [1, 0])


class TestMse:
    def test_zero_on_equal(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_arithmetic(self):
        assert mse([0.0, 0.0], [1.0, 3.0]) == pytest.approx(5.0)

    def test_single_element(self):
        assert mse([1.0], [3.0]) == pytest.approx(4.0)

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            mse([], [])


class TestCoverage:
    def test_all_inside(self):
        assert coverage([(0, 2), (1, 3)], [1.0, 2.0]) == 1.0

    def test_count(self):
        intervals = [(0, 1)] * 10
        labels = [0.5] * 9 + [2.0]
        assert coverage(intervals, labels) == pytest.approx(0.9)

    def test_degenerate_closed(self):
        assert coverage([(1.0, 1.0)], [1.0]) == 1.0


class TestObjective:
    def test_directions(self):
        assert Objective("auc").direction == "higher_is_better"
        assert Objective("mse").direction == "lower_is_better"

    def test_normalization_round_trip(self):
        for name, value in [("auc", 0.9), ("mse", 2.5), ("spd", 0.3)]:
            obj = Objective(name)
            assert obj.denormalize(obj.normalize(value)) == value

    def test_lower_is_better_negated(self):
        assert Objective("eo").normalize(0.4) == -0.4

    def test_unknown_name(self):
        with pytest.raises(MetricError):
            Objective("accuracy")

    def test_group_spec(self):
        g = GroupSpec("sex", "Male")
        assert g.attribute == "sex" and g.privileged == "Male"
