"""Run orchestration: config parsing, end-to-end runs, reports, baselines.

All randomness in a run flows from the config seed:

    seed -> "split"                       train/test partition
         -> "train"                       model fitting (conformal split)
         -> "tpe", template key           per-template TPE stream
              -> "eval", trial, repeat    corruption noise per evaluation
         -> "warmstart", template key     finetune TPE stream
         -> "baseline" / "baseline-eval"  random baseline
         -> "final-eval"                  budget-sweep plot data
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import corruption as C
from . import pipelines as P
from .data import Dataset, Schema, load_csv, load_schema
from .metrics import GroupSpec, Objective
from .rng import derive_seed
from .search import (
    SearchConfig,
    SearchError,
    SearchResult,
    beam_search,
    eval_seeds_for_trial,
    sample_then_transfer,
    warm_start,
)
from .tpe import sample_uniform


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str
    schema_path: str
    error_kind: str  # missing_value | label_error | selection_bias
    objective_name: str
    budget: float
    seed: int
    output_dir: str
    error_target: str | None = None
    threshold: float = 0.5
    privileged: str | None = None
    train_fraction: float = 0.8
    pipeline: dict | None = None
    external: dict | None = None
    proxy_pipeline: dict | None = None
    sample_fraction: float | None = None
    baseline_trials: int = 0
    search: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.pipeline is None) == (self.external is None):
            raise ConfigError("exactly one of [pipeline] and [external] must be set")
        if self.error_kind not in ("missing_value", "label_error", "selection_bias"):
            raise ConfigError(f"unknown error kind {self.error_kind!r}")
        if self.error_kind == "missing_value" and not self.error_target:
            raise ConfigError("missing_value needs error.target")
        if self.proxy_pipeline is not None:
            expensive = self.pipeline and self.pipeline.get("cleaner") == "knn_impute"
            if self.external is None and not expensive:
                raise ConfigError(
                    "a proxy pipeline is only allowed with an external or knn_impute target"
                )
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")


def load_run_config(path: str | Path) -> RunConfig:
    """Parse a TOML or JSON run configuration."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        import tomli

        doc = tomli.loads(text)
    else:
        doc = json.loads(text)
    error = doc.get("error", {})
    return RunConfig(
        dataset_path=doc["dataset"],
        schema_path=doc["schema"],
        error_kind=error.get("type", doc.get("error_type", "")),
        error_target=error.get("target"),
        objective_name=doc["objective"],
        threshold=float(doc.get("threshold", 0.5)),
        privileged=doc.get("privileged"),
        budget=float(doc["budget"]),
        train_fraction=float(doc.get("train_fraction", 0.8)),
        seed=int(doc["seed"]),
        output_dir=doc.get("output_dir", "out"),
        pipeline=doc.get("pipeline"),
        external=doc.get("external"),
        proxy_pipeline=doc.get("proxy_pipeline"),
        sample_fraction=doc.get("sample_fraction"),
        baseline_trials=int(doc.get("baseline_trials", 0)),
        search=doc.get("search", {}),
    )


def build_search_config(config: RunConfig) -> SearchConfig:
    fields = dict(config.search)
    blocked = tuple(tuple(pair) for pair in fields.pop("blocked_pairs", ()))
    return SearchConfig(
        budget=config.budget,
        objective=config.objective_name,
        seed=config.seed,
        blocked_pairs=blocked,
        **fields,
    )


def build_pipeline_spec(doc: dict) -> P.PipelineSpec:
    cleaner = P.Cleaner(doc.get("cleaner", "none"), int(doc.get("k", 5)))
    params = doc.get("params", {})
    model_name = doc.get("model", "logistic_regression")
    if model_name == "logistic_regression":
        model: P.ModelSpec = P.LogisticRegressionSpec(**params)
    elif model_name == "decision_tree":
        model = P.DecisionTreeSpec(**params)
    elif model_name == "split_conformal":
        model = P.SplitConformalSpec(**params)
    else:
        raise ConfigError(f"unknown model {model_name!r}")
    return P.PipelineSpec(cleaner, model, doc.get("task", "classification"))


def build_error_type(config: RunConfig, dataset: Dataset) -> C.ErrorType:
    if config.error_kind == "missing_value":
        return C.MissingValue(config.error_target)
    if config.error_kind == "selection_bias":
        return C.SelectionBias()
    label = dataset.schema.label
    classes = sorted({v for v in dataset.column(label) if isinstance(v, str)})
    if len(classes) < 2:
        raise ConfigError("label_error needs at least two observed label classes")
    return C.LabelError(tuple(classes))


def build_objective(config: RunConfig) -> Objective:
    return Objective(config.objective_name, config.threshold)


def build_group(config: RunConfig, schema: Schema) -> GroupSpec | None:
    if config.objective_name not in ("spd", "eo"):
        return None
    if schema.sensitive is None or config.privileged is None:
        raise ConfigError("spd/eo need schema.sensitive and config.privileged")
    return GroupSpec(schema.sensitive, config.privileged)


# ---------------------------------------------------------------------------
# Evaluators


def make_builtin_factory(
    spec: P.PipelineSpec,
    test: Dataset,
    objective: Objective,
    group: GroupSpec | None,
    train_seed: int,
):
    """Evaluator factory over a fixed test set and fixed training seed; the
    per-call seed drives only the corruption noise."""

    def factory(train_data: Dataset):
        def evaluator(dcp: C.DCP, seed: int) -> float:
            corrupted = C.apply(dcp, train_data, seed).dataset
            raw = P.evaluate(spec, corrupted, test, objective, train_seed, group)
            return objective.normalize(raw)

        evaluator.clean = lambda: objective.normalize(
            P.evaluate(spec, train_data, test, objective, train_seed, group)
        )
        evaluator.train_data = train_data
        return evaluator

    return factory


def make_external_factory(ext: P.ExternalPipeline, test: Dataset, objective: Objective):
    def factory(train_data: Dataset):
        def evaluator(dcp: C.DCP, seed: int) -> float:
            corrupted = C.apply(dcp, train_data, seed).dataset
            raw = P.external_evaluate(ext, corrupted, test)
            return objective.normalize(raw)

        evaluator.clean = lambda: objective.normalize(
            P.external_evaluate(ext, train_data, test)
        )
        evaluator.train_data = train_data
        return evaluator

    return factory


def _psi_of(dcp: C.DCP, evaluator, eval_seeds: list[int]) -> float:
    return float(np.mean([evaluator(dcp, s) for s in eval_seeds]))


# ---------------------------------------------------------------------------
# Reports


@dataclass
class RunReport:
    config: dict
    clean_raw: float
    clean_psi: float
    adversarial_raw: float
    adversarial_psi: float
    best_dcp: dict
    trajectory: list[dict]
    n_evals: int
    timings: dict
    baseline_psi: float | None = None

    def to_json(self) -> dict:
        doc = {
            "config": self.config,
            "clean": {"raw": self.clean_raw, "psi": self.clean_psi},
            "adversarial": {"raw": self.adversarial_raw, "psi": self.adversarial_psi},
            "best_dcp": self.best_dcp,
            "trajectory": self.trajectory,
            "n_evals": self.n_evals,
            "timings": self.timings,
        }
        if self.baseline_psi is not None:
            doc["baseline_psi"] = self.baseline_psi
        return doc


class _Stages:
    def __init__(self):
        self.durations: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def time(self, name: str):
        return _StageTimer(self, name)

    def total(self) -> float:
        return time.perf_counter() - self._t0


class _StageTimer:
    def __init__(self, stages: _Stages, name: str):
        self.stages = stages
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.stages.durations[self.name] = self.stages.durations.get(self.name, 0.0) + (
            time.perf_counter() - self.start
        )
        return False


def _load_inputs(config: RunConfig):
    from .data import split

    schema = load_schema(config.schema_path)
    dataset = load_csv(config.dataset_path, schema)
    parts = split(dataset, config.train_fraction, derive_seed(config.seed, "split"))
    return dataset, parts.train, parts.test


def _make_factory(config: RunConfig, test: Dataset, objective: Objective, group, train_seed):
    if config.pipeline is not None:
        spec = build_pipeline_spec(config.pipeline)
        return make_builtin_factory(spec, test, objective, group, train_seed)
    ext = P.ExternalPipeline(
        command=tuple(config.external["command"]),
        timeout=float(config.external.get("timeout", 600.0)),
        metric_key=config.external.get("metric_key", objective.name),
    )
    return make_external_factory(ext, test, objective)


def run(config: RunConfig, jobs: int = 1) -> RunReport:
    """Clean baseline, corruption search, and report emission."""
    stages = _Stages()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with stages.time("load"):
        _, train, test = _load_inputs(config)
        objective = build_objective(config)
        group = build_group(config, train.schema)
        error_type = build_error_type(config, train)
        search_config = build_search_config(config)
        train_seed = derive_seed(config.seed, "train")
        factory = _make_factory(config, test, objective, group, train_seed)
        evaluator = factory(train)

    with stages.time("clean_baseline"):
        clean_psi = evaluator.clean()

    map_fn = None
    pool = None
    if jobs > 1:
        pool = ThreadPoolExecutor(max_workers=jobs)
        map_fn = lambda fn, items: list(pool.map(fn, items))

    trajectory: list[dict] = []
    records: list[dict] = []
    try:
        if config.proxy_pipeline is not None:
            proxy_spec = build_pipeline_spec(config.proxy_pipeline)
            proxy_factory = make_builtin_factory(proxy_spec, test, objective, group, train_seed)
            with stages.time("dependency_search"):
                proxy_result = beam_search(
                    train, error_type, proxy_factory(train), search_config, map_fn
                )
            with stages.time("finetuning"):
                fine = warm_start(proxy_result, evaluator, search_config, train)
            best_dcp, best_psi = fine.dcp, fine.psi
            eval_seeds = eval_seeds_for_trial(fine.seed, fine.best_trial, search_config.repeats)
            trajectory = [dict(stage="proxy", **t) for t in proxy_result.trace]
            trajectory.append(
                {"stage": "finetune", "depth": len(proxy_result.trace) + 1, "best_psi": fine.psi}
            )
            records = [dict(stage="proxy", **r) for r in proxy_result.records]
            records += [dict(stage="finetune", depth=0, **r) for r in fine.records]
            n_evals = proxy_result.n_evals + fine.n_evals
        elif config.sample_fraction is not None:
            with stages.time("dependency_search"):
                transfer = sample_then_transfer(
                    train, config.sample_fraction, factory, search_config, error_type, map_fn
                )
            best_dcp, best_psi = transfer.dcp, transfer.psi_full
            eval_seeds = [derive_seed(config.seed, "transfer-eval")]
            trajectory = [dict(stage="sample", **t) for t in transfer.search.trace]
            trajectory.append(
                {
                    "stage": "transfer",
                    "depth": len(transfer.search.trace) + 1,
                    "best_psi": transfer.psi_full,
                    "sample_psi": transfer.psi_sample,
                }
            )
            records = [dict(stage="sample", **r) for r in transfer.search.records]
            n_evals = transfer.search.n_evals + 1
        else:
            with stages.time("dependency_search"):
                result = beam_search(train, error_type, evaluator, search_config, map_fn)
            best_dcp, best_psi = result.dcp, result.psi
            best_tpe_seed = derive_seed(search_config.seed, "tpe", result.best_template.key())
            best_trial = _best_trial_index(result)
            eval_seeds = eval_seeds_for_trial(best_tpe_seed, best_trial, search_config.repeats)
            trajectory = [dict(stage="search", **t) for t in result.trace]
            records = [dict(stage="search", **r) for r in result.records]
            n_evals = result.n_evals
    finally:
        if pool is not None:
            pool.shutdown()

    baseline_psi = None
    if config.baseline_trials > 0:
        with stages.time("baseline"):
            baseline_psi = random_baseline(config, config.baseline_trials)

    best_doc = {
        "dcp": best_dcp.to_json(),
        "psi": best_psi,
        "raw": objective.denormalize(best_psi),
        "eval_seeds": eval_seeds,
        "train_seed": train_seed,
        "seed": config.seed,
    }

    with stages.time("reporting"):
        report = RunReport(
            config=_config_doc(config),
            clean_raw=objective.denormalize(clean_psi),
            clean_psi=clean_psi,
            adversarial_raw=objective.denormalize(best_psi),
            adversarial_psi=best_psi,
            best_dcp=best_doc,
            trajectory=trajectory,
            n_evals=n_evals,
            timings={},
            baseline_psi=baseline_psi,
        )
        _write_json(out_dir / "best_dcp.json", best_doc)
        with (out_dir / "trace.jsonl").open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        _write_plotdata(out_dir / "plotdata.csv", config, trajectory, best_dcp, evaluator)

    report.timings = {**stages.durations, "total": stages.total()}
    _write_json(out_dir / "report.json", report.to_json())
    return report


def _best_trial_index(result: SearchResult) -> int:
    history = result.best_history
    best = min((t.psi, i) for i, t in enumerate(history.trials))
    return best[1]


def _config_doc(config: RunConfig) -> dict:
    doc = asdict(config)
    search = build_search_config(config)
    doc["search"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(search).items()}
    return doc


def _write_json(path: Path, doc: dict) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_plotdata(path, config: RunConfig, trajectory, best_dcp, evaluator) -> None:
    """Plot-ready rows: best psi per depth, plus psi across a budget sweep of
    the winning mechanism."""
    rows = [("kind", "x", "psi")]
    for entry in trajectory:
        rows.append(("depth", entry["depth"], entry["best_psi"]))
    if config.budget > 0:
        seed = derive_seed(config.seed, "final-eval")
        for step in range(1, 6):
            budget = config.budget * step / 5.0
            projected = C.project_to_budget(best_dcp, evaluator.train_data, budget)
            rows.append(("budget", budget, evaluator(projected, seed)))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def replay(config: RunConfig, dcp_path: str | Path) -> dict:
    """Re-evaluate a serialized best DCP; bit-exact against the stored psi."""
    doc = json.loads(Path(dcp_path).read_text(encoding="utf-8"))
    _, train, test = _load_inputs(config)
    objective = build_objective(config)
    group = build_group(config, train.schema)
    factory = _make_factory(config, test, objective, group, doc["train_seed"])
    evaluator = factory(train)
    dcp = C.dcp_from_json(doc["dcp"], train)
    psi = _psi_of(dcp, evaluator, doc["eval_seeds"])
    return {
        "replayed_psi": psi,
        "stored_psi": doc["psi"],
        "match": psi == doc["psi"],
    }


def random_baseline(config: RunConfig, n_trials: int) -> float:
    """Worst psi over uniformly sampled (template, theta) pairs within budget."""
    if n_trials < 1:
        raise ConfigError("baseline needs n_trials >= 1")
    _, train, test = _load_inputs(config)
    objective = build_objective(config)
    group = build_group(config, train.schema)
    error_type = build_error_type(config, train)
    search_config = build_search_config(config)
    train_seed = derive_seed(config.seed, "train")
    evaluator = _make_factory(config, test, objective, group, train_seed)(train)
    rng = np.random.default_rng(derive_seed(config.seed, "baseline"))
    names = train.schema.names
    worst = None
    for i in range(n_trials):
        size = int(rng.integers(1, search_config.max_pattern_attrs + 1))
        size = min(size, len(names))
        chosen = rng.choice(len(names), size=size, replace=False)
        attrs = tuple(names[j] for j in sorted(int(c) for c in chosen))
        template = C.template_for(train, error_type, attrs)
        theta = sample_uniform(template.parameter_space, rng)
        dcp = C.project_to_budget(C.instantiate(template, theta), train, search_config.budget)
        try:
            psi = evaluator(dcp, derive_seed(config.seed, "baseline-eval", i))
        except (P.PipelineError, P.ExternalPipelineError, SearchError):
            continue
        if worst is None or psi < worst:
            worst = psi
    if worst is None:
        raise SearchError("all baseline evaluations failed")
    return float(worst)
