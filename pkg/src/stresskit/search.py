"""Bi-level search for the most adversarial corruption mechanism.

The upper level is a beam search over pattern attribute sets; the lower level
tunes each template's parameters with TPE under the error budget. Evaluators
are pure functions of (DCP, seed), and every per-candidate seed is derived
from the template's stable key, so candidates may be evaluated concurrently
without changing any result.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corruption import (
    DCP,
    CorruptionTemplate,
    ErrorType,
    LabelError,
    MissingValue,
    instantiate,
    project_to_budget,
    template_for,
)
from .data import MISSING, NUMERIC, Dataset
from .rng import derive_seed
from .tpe import Trial, TrialHistory, sample_uniform, tpe_suggest, zero_corruption_theta

Evaluator = Callable[[DCP, int], float]  # (dcp, seed) -> normalized psi
EvaluatorFactory = Callable[[Dataset], Evaluator]

IMPROVEMENT_TOL = 1e-4  # minimum psi gain for the beam to count as improving


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    budget: float = 0.1
    objective: str = "auc"
    seed: int = 0
    beam_width: int = 4
    max_depth: int = 3
    tpe_iterations: int = 60
    n_init: int = 10
    gamma: float = 0.25
    candidate_pool: int = 24
    max_pattern_attrs: int = 3
    min_support: float = 0.01
    repeats: int = 1
    blocked_pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.beam_width < 1 or self.max_depth < 1:
            raise SearchError("beam_width and max_depth must be >= 1")
        if not (self.tpe_iterations >= self.n_init >= 1):
            raise SearchError("need tpe_iterations >= n_init >= 1")
        if not 0 < self.gamma < 1:
            raise SearchError("gamma must lie in (0, 1)")
        if not 0 < self.min_support < 1:
            raise SearchError("min_support must lie in (0, 1)")
        if self.budget < 0:
            raise SearchError("budget must be non-negative")
        if self.repeats < 1 or self.candidate_pool < 1:
            raise SearchError("repeats and candidate_pool must be >= 1")


@dataclass(frozen=True)
class BeamEntry:
    template: CorruptionTemplate
    best_dcp: DCP
    psi: float

    def sort_key(self):
        attrs = tuple(sorted(self.template.pattern_attributes))
        return (self.psi, len(attrs), attrs)


@dataclass
class TPEResult:
    dcp: DCP | None
    psi: float
    history: TrialHistory
    n_evals: int
    best_trial: int
    seed: int
    records: list[dict] = field(default_factory=list)


@dataclass
class SearchResult:
    dcp: DCP
    psi: float
    beam: list[BeamEntry]
    trace: list[dict]
    records: list[dict]
    n_evals: int
    best_template: CorruptionTemplate
    best_history: TrialHistory


def eval_seeds_for_trial(tpe_seed: int, trial_index: int, repeats: int) -> list[int]:
    """The corruption seeds a given trial used; recorded for exact replay."""
    return [derive_seed(tpe_seed, "eval", trial_index, r) for r in range(repeats)]


def tpe_run(
    template: CorruptionTemplate,
    evaluate: Evaluator,
    config: SearchConfig,
    dataset: Dataset,
    seed: int | None = None,
    initial_history: list[Trial] | None = None,
    first_theta: dict | None = None,
) -> TPEResult:
    """Tune one template: suggest, instantiate, project to budget, evaluate.

    Trial 0 is always the zero-corruption point, so the best psi never
    exceeds the clean psi; a warm-start binding, when given, is re-evaluated
    as trial 1. Failed evaluations poison only their own trial.
    """
    if seed is None:
        seed = derive_seed(config.seed, "tpe", template.key())
    rng = np.random.default_rng(seed)
    history = TrialHistory(config.gamma, list(initial_history or []))
    space = template.parameter_space
    best_psi = math.inf
    best_dcp: DCP | None = None
    best_trial = -1
    records: list[dict] = []
    n_evals = 0
    for t in range(config.tpe_iterations):
        if t == 0:
            theta = zero_corruption_theta(space, rng)
        elif t == 1 and first_theta is not None:
            theta = dict(first_theta)
        elif len(history.usable()) < config.n_init:
            theta = sample_uniform(space, rng)
        else:
            theta = tpe_suggest(history, space, rng, config.n_init, config.candidate_pool)
        dcp = project_to_budget(instantiate(template, theta), dataset, config.budget)
        started = time.perf_counter()
        values = []
        failed = False
        for r, eval_seed in enumerate(eval_seeds_for_trial(seed, t, config.repeats)):
            try:
                values.append(float(evaluate(dcp, eval_seed)))
            except Exception:
                failed = True
                break
            finally:
                n_evals += 1
        psi = math.inf if failed else float(np.mean(values))
        # densities observe the suggested theta; the budget projection only
        # shapes the mechanism that gets evaluated
        history.trials.append(Trial(dict(theta), psi))
        records.append(
            {
                "template": template.key(),
                "trial": t,
                "theta": dict(dcp.theta),
                "psi": psi,
                "wall_time": time.perf_counter() - started,
            }
        )
        if psi < best_psi:
            best_psi, best_dcp, best_trial = psi, dcp, t
    return TPEResult(best_dcp, best_psi, history, n_evals, best_trial, seed, records)


# ---------------------------------------------------------------------------
# Template enumeration


def _blocked(attrs: tuple[str, ...], config: SearchConfig) -> bool:
    present = set(attrs)
    for a, b in config.blocked_pairs:
        if a in present and b in present:
            return True
    return False


def _ordered(dataset: Dataset, attrs) -> tuple[str, ...]:
    names = dataset.schema.names
    return tuple(sorted(set(attrs), key=names.index))


def determine_seeds(
    dataset: Dataset, error_type: ErrorType, config: SearchConfig
) -> list[CorruptionTemplate]:
    """Initial templates, constrained by the error-type heuristics: missing
    values gate on the target and the label (MNAR plus concept drift), label
    errors gate on the label; selection bias starts from every attribute."""
    schema = dataset.schema
    if isinstance(error_type, MissingValue):
        seed_sets = [_ordered(dataset, {error_type.target, schema.label})]
    elif isinstance(error_type, LabelError):
        seed_sets = [(schema.label,)]
    else:
        seed_sets = [(name,) for name in schema.names]
    seed_sets = [s for s in seed_sets if not _blocked(s, config)]
    if not seed_sets:
        raise SearchError("no admissible seed templates for this error type")
    return [template_for(dataset, error_type, attrs) for attrs in seed_sets]


def _support_limits(dataset: Dataset) -> dict[str, float]:
    """Optimistic per-attribute bound on the matchable row fraction."""
    n = max(len(dataset), 1)
    limits = {}
    for attr in dataset.schema.attributes:
        if attr.kind == NUMERIC:
            col = dataset.numeric_column(attr.name)
            limits[attr.name] = float((~np.isnan(col)).sum()) / n
        else:
            counts: dict[str, int] = {}
            for v in dataset.column(attr.name):
                if v is not MISSING:
                    counts[v] = counts.get(v, 0) + 1
            limits[attr.name] = max(counts.values(), default=0) / n
    return limits


def expand(
    beam: list[BeamEntry],
    dataset: Dataset,
    config: SearchConfig,
    exclude: set[frozenset] | None = None,
) -> list[CorruptionTemplate]:
    """One-attribute extensions of every beam pattern, deduplicated and
    filtered by size, support, and the blocked-pair list."""
    if not beam:
        raise SearchError("cannot expand an empty beam")
    limits = _support_limits(dataset)
    seen: set[frozenset] = set(exclude or set())
    children: list[CorruptionTemplate] = []
    for entry in beam:
        current = entry.template.pattern_attributes
        if len(current) >= config.max_pattern_attrs:
            continue
        for name in dataset.schema.names:
            if name in current:
                continue
            attrs = _ordered(dataset, current + (name,))
            key = frozenset(attrs)
            if key in seen or _blocked(attrs, config):
                continue
            if min(limits[a] for a in attrs) < config.min_support:
                continue
            seen.add(key)
            children.append(template_for(dataset, entry.template.error_type, attrs))
    return children


# ---------------------------------------------------------------------------
# Beam search


def _merge_beam(beam: list[BeamEntry], new: list[BeamEntry], width: int) -> list[BeamEntry]:
    merged = sorted(beam + new, key=BeamEntry.sort_key)
    return merged[:width]


def beam_search(
    dataset: Dataset,
    error_type: ErrorType,
    evaluator: Evaluator,
    config: SearchConfig,
    map_fn=None,
) -> SearchResult:
    """Alternating bi-level optimization: evaluate candidates with tpe_run,
    keep the top beam_width, expand, and stop on no improvement or max depth."""
    if map_fn is None:
        map_fn = lambda fn, items: [fn(x) for x in items]
    candidates = determine_seeds(dataset, error_type, config)
    evaluated: set[frozenset] = set()
    beam: list[BeamEntry] = []
    results: dict[str, TPEResult] = {}
    trace: list[dict] = []
    records: list[dict] = []
    n_evals = 0

    def run_one(template: CorruptionTemplate) -> TPEResult:
        return tpe_run(template, evaluator, config, dataset)

    for depth in range(1, config.max_depth + 1):
        best_before = beam[0].psi if beam else math.inf
        outcomes = list(map_fn(run_one, candidates))
        new_entries = []
        for template, outcome in zip(candidates, outcomes):
            evaluated.add(frozenset(template.pattern_attributes))
            n_evals += outcome.n_evals
            for rec in outcome.records:
                records.append({"depth": depth, **rec})
            if outcome.dcp is not None:
                results[template.key()] = outcome
                new_entries.append(BeamEntry(template, outcome.dcp, outcome.psi))
        beam = _merge_beam(beam, new_entries, config.beam_width)
        if not beam:
            raise SearchError("every candidate evaluation failed")
        trace.append(
            {
                "depth": depth,
                "best_psi": beam[0].psi,
                "beam": [
                    {"template": e.template.key(), "psi": e.psi} for e in beam
                ],
                "n_evals_total": n_evals,
            }
        )
        if best_before - beam[0].psi <= IMPROVEMENT_TOL:
            break
        if depth == config.max_depth:
            break
        candidates = expand(beam, dataset, config, exclude=evaluated)
        if not candidates:
            break

    best = beam[0]
    best_result = results[best.template.key()]
    return SearchResult(
        dcp=best.best_dcp,
        psi=best.psi,
        beam=beam,
        trace=trace,
        records=records,
        n_evals=n_evals,
        best_template=best.template,
        best_history=best_result.history,
    )


# ---------------------------------------------------------------------------
# Transfer strategies


def warm_start(
    proxy_result: SearchResult,
    target_evaluator: Evaluator,
    config: SearchConfig,
    dataset: Dataset,
) -> TPEResult:
    """Skip the structural search: finetune the proxy's winning template on
    the target, seeding TPE with the proxy's trial history. The proxy's best
    binding is re-evaluated as the first trial, so reported psi values always
    come from the target evaluator.
    """
    template = proxy_result.best_template
    names = set(dataset.schema.names)
    if not set(template.pattern_attributes) <= names:
        raise SearchError("proxy template references attributes missing from the target schema")
    if isinstance(template.error_type, MissingValue) and template.error_type.target not in names:
        raise SearchError("proxy missing-value target is absent from the target schema")
    return tpe_run(
        template,
        target_evaluator,
        config,
        dataset,
        seed=derive_seed(config.seed, "warmstart", template.key()),
        initial_history=list(proxy_result.best_history.trials),
        first_theta=dict(proxy_result.dcp.theta),
    )


@dataclass
class TransferResult:
    dcp: DCP
    psi_sample: float
    psi_full: float
    search: SearchResult


def sample_then_transfer(
    dataset: Dataset,
    sample_fraction: float,
    evaluator_factory: EvaluatorFactory,
    config: SearchConfig,
    error_type: ErrorType,
    map_fn=None,
) -> TransferResult:
    """Run the structural search on a seeded sample, then re-project the
    winning DCP's budget on the full data and re-evaluate it there."""
    if not 0 < sample_fraction <= 1:
        raise SearchError("sample_fraction must lie in (0, 1]")
    if sample_fraction == 1.0:
        search_data = dataset
    else:
        n = len(dataset)
        k = max(2, int(round(sample_fraction * n)))
        perm = np.random.default_rng(derive_seed(config.seed, "sample")).permutation(n)
        search_data = dataset.subset(sorted(int(i) for i in perm[:k]))
    result = beam_search(search_data, error_type, evaluator_factory(search_data), config, map_fn)
    if sample_fraction == 1.0:
        return TransferResult(result.dcp, result.psi, result.psi, result)
    projected = project_to_budget(result.dcp, dataset, config.budget)
    psi_full = evaluator_factory(dataset)(projected, derive_seed(config.seed, "transfer-eval"))
    return TransferResult(projected, result.psi, float(psi_full), result)
