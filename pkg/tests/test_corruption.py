import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stresskit.corruption import (
    CorruptionError,
    DCP,
    LabelError,
    MissingValue,
    Pattern,
    RangeCondition,
    SelectionBias,
    apply,
    apply_stack,
    dcp_from_json,
    expected_fraction,
    instantiate,
    pattern_mask,
    pattern_matches,
    project_to_budget,
    template_for,
)
from stresskit.data import Attribute, CATEGORICAL, Dataset, MISSING, NUMERIC, Schema


def brute_force_matches(pattern, dataset):
    """Row-by-row oracle used against the vectorized mask."""
    return [
        i for i, row in enumerate(dataset.rows)
        if pattern_matches(pattern, row, dataset.schema)
    ]


class TestPatternMatching:
    def test_direct_evaluation(self, toy_schema):
        pattern = Pattern((RangeCondition("age", 30.0, 40.0), RangeCondition("label", "1", "1")))
        assert pattern_matches(pattern, (35.0, 1.0, "a", "1"), toy_schema)

    def test_bound_violated(self, toy_schema):
        pattern = Pattern((RangeCondition("age", 30.0, 40.0), RangeCondition("label", "1", "1")))
        assert not pattern_matches(pattern, (20.0, 1.0, "a", "1"), toy_schema)

    def test_subpopulation_gate(self, toy_schema):
        # equality on a demographic and the label picks out exactly that group
        pattern = Pattern((RangeCondition("grp", "a", "a"), RangeCondition("label", "0", "0")))
        rows = [
            (30.0, 1.0, "a", "0"),
            (30.0, 1.0, "a", "1"),
            (30.0, 1.0, "b", "0"),
        ]
        hits = [pattern_matches(pattern, r, toy_schema) for r in rows]
        assert hits == [True, False, False]

    def test_missing_never_matches(self, toy_schema):
        pattern = Pattern((RangeCondition("age", 0.0, 100.0),))
        assert not pattern_matches(pattern, (MISSING, 1.0, "a", "1"), toy_schema)

    def test_one_sided_bounds(self, toy_schema):
        only_lower = Pattern((RangeCondition("age", 30.0, None),))
        assert pattern_matches(only_lower, (90.0, 1.0, "a", "1"), toy_schema)
        assert not pattern_matches(only_lower, (29.0, 1.0, "a", "1"), toy_schema)

    def test_unknown_attribute(self, toy_schema):
        pattern = Pattern((RangeCondition("height", 1.0, 2.0),))
        with pytest.raises(Exception):
            pattern_matches(pattern, (35.0, 1.0, "a", "1"), toy_schema)

    def test_categorical_range_rejected(self, toy_schema):
        pattern = Pattern((RangeCondition("grp", "a", "b"),))
        with pytest.raises(CorruptionError, match="equality"):
            pattern_matches(pattern, (35.0, 1.0, "a", "1"), toy_schema)

    def test_mask_agrees_with_row_oracle(self, toy_dataset):
        pattern = Pattern((RangeCondition("age", 30.0, 50.0), RangeCondition("grp", "a", "a")))
        mask = pattern_mask(pattern, toy_dataset)
        assert sorted(np.flatnonzero(mask)) == brute_force_matches(pattern, toy_dataset)


class TestInstantiate:
    def test_bounds_from_lower_width(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 0.5, "lo:age": 30.0, "w:age": 10.0})
        cond = dcp.pattern.conditions[0]
        assert (cond.lower, cond.upper) == (30.0, 40.0)

    def test_probability_gate(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("grp", "label"))
        dcp = instantiate(tpl, {"p": 0.95, "eq:grp": "a", "eq:label": "0"})
        assert dcp.p == 0.95
        assert dcp.pattern.attributes == ("grp", "label")

    def test_zero_probability_is_identity(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 0.0, "lo:age": 20.0, "w:age": 30.0})
        out = apply(dcp, toy_dataset, 123)
        assert out.dataset.rows == toy_dataset.rows
        assert out.kept_indices == tuple(range(len(toy_dataset)))
        assert not out.corrupted_cells

    def test_out_of_space_rejected(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        with pytest.raises(CorruptionError):
            instantiate(tpl, {"p": 1.5, "lo:age": 20.0, "w:age": 0.0})
        with pytest.raises(CorruptionError):
            instantiate(tpl, {"p": 0.5, "lo:age": 20.0, "w:age": -1.0})

    def test_missing_parameter_rejected(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        with pytest.raises(CorruptionError, match="missing"):
            instantiate(tpl, {"p": 0.5, "lo:age": 20.0})


class TestApply:
    def test_mv_hits_exactly_matching_rows(self, toy_dataset):
        # oracle: enumerate matching rows by brute force, expect exactly those cells
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 1.0, "lo:age": 40.0, "w:age": 20.0})
        expected = set(brute_force_matches(dcp.pattern, toy_dataset))
        out = apply(dcp, toy_dataset, 5)
        wage_idx = toy_dataset.schema.index("wage")
        corrupted_rows = {i for i, _ in out.corrupted_cells}
        assert corrupted_rows == expected
        for i in range(len(toy_dataset)):
            if i in expected:
                assert out.dataset.rows[i][wage_idx] is MISSING
            else:
                assert out.dataset.rows[i] == toy_dataset.rows[i]

    def test_sb_drops_matching_rows_only(self, toy_dataset):
        tpl = template_for(toy_dataset, SelectionBias(), ("grp", "label"))
        dcp = instantiate(tpl, {"p": 1.0, "eq:grp": "a", "eq:label": "0"})
        expected_dropped = set(brute_force_matches(dcp.pattern, toy_dataset))
        out = apply(dcp, toy_dataset, 11)
        assert set(range(len(toy_dataset))) - set(out.kept_indices) == expected_dropped
        for kept_pos, original in enumerate(out.kept_indices):
            assert out.dataset.rows[kept_pos] == toy_dataset.rows[original]

    def test_binary_flip(self, toy_dataset):
        tpl = template_for(toy_dataset, LabelError(("0", "1")), ("grp",))
        dcp = instantiate(tpl, {"p": 1.0, "eq:grp": "b"})
        out = apply(dcp, toy_dataset, 3)
        label_idx = toy_dataset.schema.index("label")
        for i, row in enumerate(toy_dataset.rows):
            new = out.dataset.rows[i][label_idx]
            if row[2] == "b":
                assert new != row[label_idx]
            else:
                assert new == row[label_idx]

    def test_determinism(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 0.5, "lo:age": 20.0, "w:age": 35.0})
        a = apply(dcp, toy_dataset, 17)
        b = apply(dcp, toy_dataset, 17)
        assert a.dataset.rows == b.dataset.rows
        assert a.corrupted_cells == b.corrupted_cells
        c = apply(dcp, toy_dataset, 18)
        assert c.dataset.rows != a.dataset.rows or c.corrupted_cells != a.corrupted_cells

    def test_locality_non_matching_rows_untouched(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("age"), ("label",))
        dcp = instantiate(tpl, {"p": 0.7, "eq:label": "1"})
        out = apply(dcp, toy_dataset, 23)
        for i, row in enumerate(toy_dataset.rows):
            if row[3] != "1":
                assert out.dataset.rows[i] == row


class TestMultiClassLabelError:
    @pytest.fixture
    def multi_dataset(self):
        schema = Schema(
            attributes=(Attribute("x", NUMERIC), Attribute("label", CATEGORICAL)),
            label="label",
        )
        rows = tuple((float(i), "a") for i in range(3000))
        return Dataset(schema, rows)

    def test_subinterval_frequencies(self, multi_dataset):
        # with p=1 the class-assignment frequencies over matching rows follow
        # the normalized weights within 3-sigma multinomial bounds
        et = LabelError(("a", "b", "c"))
        tpl = template_for(multi_dataset, et, ("x",))
        weights = {"q:a": 0.2, "q:b": 0.3, "q:c": 0.5}
        dcp = instantiate(tpl, {"p": 1.0, "lo:x": 0.0, "w:x": 2999.0, **weights})
        out = apply(dcp, multi_dataset, 91)
        labels = [row[1] for row in out.dataset.rows]
        n = len(labels)
        for cls, q in [("a", 0.2), ("b", 0.3), ("c", 0.5)]:
            count = labels.count(cls)
            sigma = math.sqrt(n * q * (1 - q))
            assert abs(count - n * q) <= 3 * sigma, (cls, count)

    def test_weights_normalized(self, multi_dataset):
        et = LabelError(("a", "b", "c"))
        tpl = template_for(multi_dataset, et, ("x",))
        dcp = instantiate(tpl, {"p": 1.0, "lo:x": 0.0, "w:x": 2999.0,
                                "q:a": 0.4, "q:b": 0.4, "q:c": 0.8})
        assert sum(dcp.class_weights()) == pytest.approx(1.0)


class TestExpectedFraction:
    def test_brute_force_count(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 0.5, "lo:age": 30.0, "w:age": 12.0})
        matches = len(brute_force_matches(dcp.pattern, toy_dataset))
        assert expected_fraction(dcp, toy_dataset) == pytest.approx(0.5 * matches / 10)
        assert matches == 5  # frozen from the fixture
        assert expected_fraction(dcp, toy_dataset) == pytest.approx(0.25)

    def test_zero_probability(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 0.0, "lo:age": 30.0, "w:age": 12.0})
        assert expected_fraction(dcp, toy_dataset) == 0.0

    def test_no_matches(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 1.0, "lo:age": 55.0, "w:age": 0.0})
        # only one row has age 55
        assert expected_fraction(dcp, toy_dataset) == pytest.approx(0.1)
        dcp2 = instantiate(tpl, {"p": 1.0, "lo:age": 54.0, "w:age": 0.5})
        assert expected_fraction(dcp2, toy_dataset) == 0.0


class TestProjectToBudget:
    def test_unchanged_when_within(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 0.5, "lo:age": 30.0, "w:age": 12.0})  # expects 0.2
        assert project_to_budget(dcp, toy_dataset, 0.3) is dcp

    def test_scaled_to_budget_exactly(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 1.0, "lo:age": 30.0, "w:age": 12.0})  # 5/10 match
        projected = project_to_budget(dcp, toy_dataset, 0.2)
        assert projected.p == pytest.approx(0.4)
        assert expected_fraction(projected, toy_dataset) == pytest.approx(0.2)

    def test_clamp_when_budget_unreachable(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 1.0, "lo:age": 30.0, "w:age": 12.0})  # max 0.4
        assert project_to_budget(dcp, toy_dataset, 0.5) is dcp

    def test_budget_zero_silences_corruption(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age",))
        dcp = instantiate(tpl, {"p": 1.0, "lo:age": 30.0, "w:age": 12.0})
        projected = project_to_budget(dcp, toy_dataset, 0.0)
        assert projected.p == 0.0
        assert apply(projected, toy_dataset, 1).dataset.rows == toy_dataset.rows


@st.composite
def random_dcp_inputs(draw):
    n = draw(st.integers(min_value=5, max_value=60))
    seed = draw(st.integers(min_value=0, max_value=2**31))
    p = draw(st.floats(min_value=0.0, max_value=1.0))
    lo = draw(st.floats(min_value=0.0, max_value=50.0))
    width = draw(st.floats(min_value=0.0, max_value=50.0))
    budget = draw(st.floats(min_value=0.01, max_value=1.0))
    return n, seed, p, lo, width, budget


@settings(max_examples=60, deadline=None)
@given(random_dcp_inputs())
def test_projection_respects_budget_property(params):
    n, seed, p, lo, width, budget = params
    rng = np.random.default_rng(seed)
    schema = Schema(
        attributes=(Attribute("x", NUMERIC), Attribute("label", CATEGORICAL)),
        label="label",
    )
    rows = tuple((float(v), "y") for v in rng.uniform(0, 50, n))
    ds = Dataset(schema, rows)
    tpl = template_for(ds, MissingValue("x"), ("x",))
    space = tpl.parameter_space
    theta = {
        "p": p,
        "lo:x": min(max(lo, space["lo:x"].lo), space["lo:x"].hi),
        "w:x": min(width, space["w:x"].hi),
    }
    dcp = project_to_budget(instantiate(tpl, theta), ds, budget)
    assert expected_fraction(dcp, ds) <= budget + 1e-12


def test_empirical_fraction_concentrates_on_budget():
    rng = np.random.default_rng(0)
    schema = Schema(
        attributes=(Attribute("x", NUMERIC), Attribute("label", CATEGORICAL)),
        label="label",
    )
    n = 800
    rows = tuple((float(v), "y") for v in rng.uniform(0, 1, n))
    ds = Dataset(schema, rows)
    tpl = template_for(ds, MissingValue("x"), ("x",))
    budget = 0.3
    space = tpl.parameter_space
    dcp = project_to_budget(
        instantiate(tpl, {"p": 1.0, "lo:x": space["lo:x"].lo, "w:x": space["w:x"].hi}),
        ds, budget,
    )
    fractions = [
        apply(dcp, ds, seed).n_corrupted_rows / n for seed in range(200)
    ]
    tolerance = 3 * math.sqrt(budget * (1 - budget) / n)
    assert abs(float(np.mean(fractions)) - budget) <= tolerance


class TestStacking:
    def test_later_stage_reads_earlier_output(self, toy_dataset):
        # stage 1 blanks wage for label=1 rows; stage 2 gates on wage, so rows
        # blanked by stage 1 can no longer match (MISSING never matches)
        tpl1 = template_for(toy_dataset, MissingValue("wage"), ("label",))
        stage1 = instantiate(tpl1, {"p": 1.0, "eq:label": "1"})
        tpl2 = template_for(toy_dataset, MissingValue("age"), ("wage",))
        stage2 = instantiate(tpl2, {"p": 1.0, "lo:wage": 10.0, "w:wage": 90.0})
        out = apply_stack([stage1, stage2], toy_dataset, 42)
        age_idx = toy_dataset.schema.index("age")
        label_idx = toy_dataset.schema.index("label")
        for i, row in enumerate(toy_dataset.rows):
            got = out.dataset.rows[i][age_idx]
            if row[label_idx] == "1":
                assert got == row[age_idx]  # wage became MISSING first
            else:
                assert got is MISSING

    def test_untouched_attribute_decisions_match_precorruption(self, toy_dataset):
        # stage 2 gates on grp, which stage 1 never corrupts: its decisions
        # must equal decisions computed on the pristine dataset
        tpl1 = template_for(toy_dataset, MissingValue("wage"), ("label",))
        stage1 = instantiate(tpl1, {"p": 1.0, "eq:label": "1"})
        tpl2 = template_for(toy_dataset, MissingValue("age"), ("grp",))
        stage2 = instantiate(tpl2, {"p": 1.0, "eq:grp": "a"})
        out = apply_stack([stage1, stage2], toy_dataset, 9)
        age_idx = toy_dataset.schema.index("age")
        expected = set(brute_force_matches(stage2.pattern, toy_dataset))
        got = {i for i in range(len(toy_dataset)) if out.dataset.rows[i][age_idx] is MISSING}
        assert got == expected


class TestSerialization:
    def test_round_trip(self, toy_dataset):
        tpl = template_for(toy_dataset, MissingValue("wage"), ("age", "label"))
        dcp = instantiate(tpl, {"p": 0.8, "lo:age": 25.0, "w:age": 20.0, "eq:label": "1"})
        doc = dcp.to_json()
        back = dcp_from_json(doc, toy_dataset)
        assert back.theta == dcp.theta
        assert back.pattern == dcp.pattern
        assert apply(back, toy_dataset, 4).dataset.rows == apply(dcp, toy_dataset, 4).dataset.rows

    def test_json_carries_conditions_and_p(self, toy_dataset):
        tpl = template_for(toy_dataset, SelectionBias(), ("grp",))
        dcp = instantiate(tpl, {"p": 0.4, "eq:grp": "b"})
        doc = dcp.to_json()
        assert doc["error_type"]["kind"] == "selection_bias"
        assert doc["p"] == 0.4
        assert doc["pattern"] == [{"attribute": "grp", "lower": "b", "upper": "b"}]
