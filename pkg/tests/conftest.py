import pytest
from hypothesis import settings

from stresskit.data import Attribute, CATEGORICAL, Dataset, NUMERIC, Schema

settings.register_profile("suite", deadline=None, derandomize=True)
settings.load_profile("suite")


@pytest.fixture
def toy_schema():
    return Schema(
        attributes=(
            Attribute("age", NUMERIC),
            Attribute("wage", NUMERIC),
            Attribute("grp", CATEGORICAL),
            Attribute("label", CATEGORICAL),
        ),
        label="label",
        sensitive="grp",
        positive_label="1",
    )


@pytest.fixture
def toy_dataset(toy_schema):
    rows = (
        (35.0, 100.0, "a", "1"),
        (20.0, 50.0, "b", "0"),
        (42.0, 80.0, "a", "1"),
        (31.0, 60.0, "b", "0"),
        (55.0, 90.0, "a", "0"),
        (28.0, 70.0, "b", "1"),
        (39.0, 40.0, "a", "0"),
        (47.0, 30.0, "b", "1"),
        (33.0, 20.0, "a", "0"),
        (51.0, 10.0, "b", "1"),
    )
    return Dataset(toy_schema, rows)
