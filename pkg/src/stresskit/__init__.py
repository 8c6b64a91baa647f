"""Adversarial data-corruption stress testing for tabular ML pipelines."""

from .corruption import (
    DCP,
    CorruptionTemplate,
    LabelError,
    MissingValue,
    Pattern,
    RangeCondition,
    SelectionBias,
    apply,
    expected_fraction,
    instantiate,
    project_to_budget,
    template_for,
)
from .data import MISSING, Attribute, Dataset, Schema, load_csv, split, write_csv
from .metrics import GroupSpec, Objective
from .pipelines import (
    Cleaner,
    DecisionTreeSpec,
    ExternalPipeline,
    LogisticRegressionSpec,
    PipelineSpec,
    SplitConformalSpec,
    evaluate,
    external_evaluate,
    train,
)
from .search import SearchConfig, beam_search, sample_then_transfer, tpe_run, warm_start

__version__ = "0.1.0"
