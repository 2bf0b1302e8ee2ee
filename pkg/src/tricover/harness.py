"""Campaign runner: wire datasets, models, coverage, generation, and the
oracle together and emit machine-readable reports.

Three modes:

* ``random-eval``: run sampled dataset inputs through the target model,
  accumulate triplet and neuron coverage, judge each input across all
  models.
* ``guided-generate``: same seed sample, but each seed is pushed uphill
  on a coverage-plus-divergence objective before being observed.
* ``neuron-coverage-baseline``: like random-eval, additionally recording
  the growth curve of both metrics after every input.

Reports serialize to a versioned JSON schema (see docs/report-schema.md)
and are byte-stable for a fixed config and rng_seed, timings aside.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import idx
from .coverage import (CoverageState, CoverageStats, NeuronCoverageState,
                       TripletRegistry)
from .errors import ConfigError
from .generate import Candidate, GenParams, generate
from .idx import Dataset
from .modelio import load_model
from .network import NetworkModel, forward
from .oracle import OracleVerdict, judge, judge_with_reference, verdict_from_labels

SCHEMA_VERSION = 1
MODES = ("random-eval", "guided-generate", "neuron-coverage-baseline")


@dataclass(frozen=True)
class CampaignConfig:
    """Everything a campaign run needs, resolved and validated."""

    mode: str
    model_paths: tuple[str, ...]
    images_path: str
    labels_path: Optional[str]
    seed_count: int
    rng_seed: int
    params: GenParams
    report_path: Optional[str] = None
    target_model: int = 0
    dump_candidates: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.model_paths:
            raise ConfigError("at least one model is required")
        if self.mode == "guided-generate" and len(self.model_paths) < 2:
            raise ConfigError("guided-generate requires at least two models "
                              "for the differential objective")
        if self.seed_count < 0:
            raise ConfigError(f"seed_count must be >= 0, got {self.seed_count}")
        if not (0 <= self.target_model < len(self.model_paths)):
            raise ConfigError(f"target_model {self.target_model} out of range "
                              f"for {len(self.model_paths)} models")


@dataclass(frozen=True)
class ModelSummary:
    """Per-model identity echoed into the report."""

    name: str
    path: str
    coverage_layer_sizes: tuple[int, ...]
    triplet_count: int


@dataclass(frozen=True)
class CampaignReport:
    """Outcome of one campaign. ``timings`` is the only non-reproducible part."""

    schema_version: int
    tool_version: str
    mode: str
    config: dict
    models: tuple[ModelSummary, ...]
    inputs_tested: int
    corner_cases: int
    adversarial_ratio: float
    coverage_initial: CoverageStats
    coverage_final: CoverageStats
    neuron_coverage: float
    neurons_covered: int
    neurons_total: int
    curve: Optional[tuple[dict, ...]] = None
    timings: dict = field(default_factory=dict, compare=False)


def _config_echo(config: CampaignConfig) -> dict:
    echo = dataclasses.asdict(config)
    echo["model_paths"] = list(config.model_paths)
    echo["params"] = dataclasses.asdict(config.params)
    return echo


def _load_models(config: CampaignConfig) -> list[NetworkModel]:
    return [load_model(p) for p in config.model_paths]


def _load_dataset(config: CampaignConfig) -> Dataset:
    return Dataset.load(config.images_path, config.labels_path)


def _sample_indices(dataset: Dataset, seed_count: int, rng_seed: int) -> np.ndarray:
    if seed_count > len(dataset):
        raise ConfigError(f"seed_count {seed_count} exceeds dataset size {len(dataset)}")
    rng = np.random.default_rng(rng_seed)
    return rng.choice(len(dataset), size=seed_count, replace=False)


def _judge_input(models: Sequence[NetworkModel], dataset: Dataset, index: int,
                 x, precomputed_label: int) -> OracleVerdict:
    if len(models) >= 2:
        return judge(models, x)
    label = dataset.label_for(index)
    if label is not None:
        return judge_with_reference(models, x, label)
    return verdict_from_labels([precomputed_label], [models[0].name])


def _summaries(config: CampaignConfig, models: Sequence[NetworkModel]) -> tuple[ModelSummary, ...]:
    out = []
    for path, m in zip(config.model_paths, models):
        sizes = m.coverage_layer_sizes
        count = TripletRegistry(sizes, name=m.name).total if len(sizes) >= 2 else 0
        out.append(ModelSummary(name=m.name, path=str(path),
                                coverage_layer_sizes=sizes, triplet_count=count))
    return tuple(out)


def _report(config: CampaignConfig, models, state: CoverageState,
            initial: CoverageStats, nc: NeuronCoverageState,
            verdicts: list[OracleVerdict], timings: dict,
            curve=None) -> CampaignReport:
    from . import __version__
    corner = sum(v.is_corner_case for v in verdicts)
    return CampaignReport(
        schema_version=SCHEMA_VERSION,
        tool_version=__version__,
        mode=config.mode,
        config=_config_echo(config),
        models=_summaries(config, models),
        inputs_tested=len(verdicts),
        corner_cases=corner,
        adversarial_ratio=corner / len(verdicts) if verdicts else 0.0,
        coverage_initial=initial,
        coverage_final=state.stats(),
        neuron_coverage=nc.coverage(),
        neurons_covered=nc.covered_neurons(),
        neurons_total=nc.total_neurons,
        curve=curve,
        timings=timings,
    )


def _coverage_trackers(config: CampaignConfig, models
                       ) -> tuple[CoverageState, NeuronCoverageState]:
    model = models[config.target_model]
    sizes = model.coverage_layer_sizes
    registry = TripletRegistry(sizes, name=model.name)
    return (CoverageState(registry, config.params.threshold),
            NeuronCoverageState(sizes, config.params.threshold))


def run_random_eval(config: CampaignConfig) -> CampaignReport:
    """Observe coverage of seed_count unmodified dataset inputs."""
    started = time.perf_counter()
    models = _load_models(config)
    dataset = _load_dataset(config)
    loaded = time.perf_counter()

    state, nc = _coverage_trackers(config, models)
    initial = state.stats()
    model = models[config.target_model]
    verdicts: list[OracleVerdict] = []
    for index in _sample_indices(dataset, config.seed_count, config.rng_seed):
        x = dataset.input_for(int(index), model.input_shape)
        trace = forward(model, x)
        state.observe(trace)
        nc.observe(trace)
        verdicts.append(_judge_input(models, dataset, int(index), x,
                                     trace.predicted_label))
    finished = time.perf_counter()
    timings = _timings(started, loaded, finished, state, len(verdicts))
    return _maybe_write(config, _report(config, models, state, initial, nc,
                                        verdicts, timings))


def run_guided(config: CampaignConfig) -> CampaignReport:
    """Generate inputs by gradient ascent from sampled seeds and observe them."""
    started = time.perf_counter()
    models = _load_models(config)
    dataset = _load_dataset(config)
    loaded = time.perf_counter()

    indices = _sample_indices(dataset, config.seed_count, config.rng_seed)
    seeds = Dataset(
        images=dataset.images[indices],
        labels=dataset.labels[indices] if dataset.labels is not None else None,
    )
    state, nc = _coverage_trackers(config, models)
    initial = state.stats()
    model = models[config.target_model]
    verdicts: list[OracleVerdict] = []
    candidates: list[Candidate] = []
    for candidate, _, verdict in generate(seeds, models, state, config.params,
                                          config.target_model):
        nc.observe(forward(model, candidate.input))
        verdicts.append(verdict)
        candidates.append(candidate)
    if config.dump_candidates is not None:
        _dump_candidates(config.dump_candidates, candidates,
                         seeds.images.shape[1:])
    finished = time.perf_counter()
    timings = _timings(started, loaded, finished, state, len(verdicts))
    return _maybe_write(config, _report(config, models, state, initial, nc,
                                        verdicts, timings))


def run_baseline(config: CampaignConfig) -> CampaignReport:
    """Random evaluation that records the per-input growth of both metrics."""
    started = time.perf_counter()
    models = _load_models(config)
    dataset = _load_dataset(config)
    loaded = time.perf_counter()

    state, nc = _coverage_trackers(config, models)
    initial = state.stats()
    model = models[config.target_model]
    verdicts: list[OracleVerdict] = []
    curve: list[dict] = []
    for index in _sample_indices(dataset, config.seed_count, config.rng_seed):
        x = dataset.input_for(int(index), model.input_shape)
        trace = forward(model, x)
        state.observe(trace)
        nc.observe(trace)
        verdicts.append(_judge_input(models, dataset, int(index), x,
                                     trace.predicted_label))
        curve.append({
            "inputs": len(verdicts),
            "neuron_coverage": nc.coverage(),
            "triplet_coverage": state.stats().triplet_coverage,
        })
    finished = time.perf_counter()
    timings = _timings(started, loaded, finished, state, len(verdicts))
    return _maybe_write(config, _report(config, models, state, initial, nc,
                                        verdicts, timings, curve=tuple(curve)))


def run_campaign(config: CampaignConfig) -> CampaignReport:
    runner = {
        "random-eval": run_random_eval,
        "guided-generate": run_guided,
        "neuron-coverage-baseline": run_baseline,
    }[config.mode]
    return runner(config)


def _timings(started, loaded, finished, state: CoverageState, inputs: int) -> dict:
    return {
        "load_s": loaded - started,
        "campaign_s": finished - loaded,
        "total_s": finished - started,
        "mean_input_s": (finished - loaded) / inputs if inputs else 0.0,
        "mean_observe_s": state.observe_seconds / inputs if inputs else 0.0,
    }


def _dump_candidates(directory: str, candidates: Sequence[Candidate],
                     image_shape: tuple[int, int]) -> None:
    os.makedirs(directory, exist_ok=True)
    if not candidates:
        return
    stack = np.stack([np.round(np.asarray(c.input).reshape(image_shape) * 255.0)
                      .astype(np.uint8) for c in candidates])
    idx.save_idx(os.path.join(directory, "candidates.idx"), stack)


def _maybe_write(config: CampaignConfig, report: CampaignReport) -> CampaignReport:
    if config.report_path is not None:
        write_report(report, config.report_path)
    return report


# ---------------------------------------------------------------------------
# Report serialization (schema v1)


def _stats_to_json(stats: CoverageStats) -> dict:
    return {
        "total_triplets": stats.total_triplets,
        "fully_covered": stats.fully_covered,
        "pair_cells_covered": stats.pair_cells_covered,
        "configs_observed": stats.configs_observed,
        "inputs_observed": stats.inputs_observed,
        "triplet_coverage": stats.triplet_coverage,
        "pair_cell_coverage": stats.pair_cell_coverage,
        "full_config_coverage": stats.full_config_coverage,
    }


def _stats_from_json(obj: dict, where: str) -> CoverageStats:
    try:
        return CoverageStats(
            total_triplets=int(obj["total_triplets"]),
            fully_covered=int(obj["fully_covered"]),
            pair_cells_covered=int(obj["pair_cells_covered"]),
            configs_observed=int(obj["configs_observed"]),
            inputs_observed=int(obj["inputs_observed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: malformed coverage stats: {exc}") from None


def report_to_json(report: CampaignReport) -> dict:
    return {
        "schema_version": report.schema_version,
        "tool_version": report.tool_version,
        "mode": report.mode,
        "config": report.config,
        "models": [dataclasses.asdict(m) | {"coverage_layer_sizes":
                                            list(m.coverage_layer_sizes)}
                   for m in report.models],
        "inputs_tested": report.inputs_tested,
        "corner_cases": report.corner_cases,
        "adversarial_ratio": report.adversarial_ratio,
        "coverage_initial": _stats_to_json(report.coverage_initial),
        "coverage_final": _stats_to_json(report.coverage_final),
        "neuron_coverage": report.neuron_coverage,
        "neurons_covered": report.neurons_covered,
        "neurons_total": report.neurons_total,
        "curve": list(report.curve) if report.curve is not None else None,
        "timings": report.timings,
    }


def report_from_json(obj: dict, where: str = "report") -> CampaignReport:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: report must be a JSON object")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{where}: unsupported report schema_version {version!r}")
    try:
        models = tuple(
            ModelSummary(name=m["name"], path=m["path"],
                         coverage_layer_sizes=tuple(m["coverage_layer_sizes"]),
                         triplet_count=int(m["triplet_count"]))
            for m in obj["models"]
        )
        curve = obj.get("curve")
        return CampaignReport(
            schema_version=int(version),
            tool_version=str(obj["tool_version"]),
            mode=str(obj["mode"]),
            config=obj["config"],
            models=models,
            inputs_tested=int(obj["inputs_tested"]),
            corner_cases=int(obj["corner_cases"]),
            adversarial_ratio=float(obj["adversarial_ratio"]),
            coverage_initial=_stats_from_json(obj["coverage_initial"], where),
            coverage_final=_stats_from_json(obj["coverage_final"], where),
            neuron_coverage=float(obj["neuron_coverage"]),
            neurons_covered=int(obj["neurons_covered"]),
            neurons_total=int(obj["neurons_total"]),
            curve=tuple(curve) if curve is not None else None,
            timings=dict(obj.get("timings", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: malformed report: {exc}") from None


def write_report(report: CampaignReport, path) -> None:
    """Write a report as schema-v1 JSON. I/O errors propagate."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_json(report), fh, indent=2)
        fh.write("\n")


def read_report(path) -> CampaignReport:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc.msg} "
                          f"(line {exc.lineno})") from None
    return report_from_json(obj, where=str(path))


def render_table(reports: Sequence[CampaignReport]) -> str:
    """Tabular summary: one column per report, four headline metric rows."""
    headers = [""] + [f"{r.mode}[{i}]" for i, r in enumerate(reports)]

    def row(label, fn):
        return [label] + [fn(r) for r in reports]

    def pct(x):
        return f"{100.0 * x:.1f}%"

    rows = [
        row("coverage (random inputs)",
            lambda r: pct(r.coverage_final.triplet_coverage)
            if r.mode != "guided-generate" else "-"),
        row("coverage (guided inputs)",
            lambda r: pct(r.coverage_final.triplet_coverage)
            if r.mode == "guided-generate" else "-"),
        row("corner cases found", lambda r: str(r.corner_cases)),
        row("adversarial ratio", lambda r: pct(r.adversarial_ratio)),
        row("neuron coverage", lambda r: pct(r.neuron_coverage)),
        row("inputs tested", lambda r: str(r.inputs_tested)),
    ]
    widths = [max(len(str(line[c])) for line in [headers] + rows)
              for c in range(len(headers))]
    out = []
    for line in [headers] + rows:
        out.append("  ".join(str(cell).ljust(w) for cell, w in zip(line, widths)).rstrip())
    return "\n".join(out) + "\n"
