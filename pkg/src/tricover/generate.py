"""Gradient-guided test-input generation under a brightness-only constraint.

For each seed image, pick a triplet that is not yet fully covered and a
configuration it still needs, build an objective rewarding that
configuration (plus cross-model divergence when several models are
given), and ascend: the input gradient is collapsed to its mean, and
the whole image is shifted by step_size in the direction of that mean,
clipped to [0, 1]. The only manipulation is uniform brightness, so a
candidate differs from its seed by a single scalar except where
clipping bites.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .coverage import CoverageState, Triplet, config_bits, config_value, uncovered_targets
from .errors import ObjectiveError
from .idx import Dataset
from .network import NetworkModel, forward
from .objective import (CoverageTerm, DifferentialTerm, NeuronId, ObjectiveSpec,
                        evaluate_with_gradient)
from .oracle import OracleVerdict, judge, judge_with_reference, seed_label, verdict_from_labels


@dataclass(frozen=True)
class GenParams:
    """Knobs for guided generation.

    ``lambda1`` weights the differential term, ``lambda2`` each coverage
    term. ``retarget_each_iteration`` re-selects the triplet target from
    live coverage state before every ascent step instead of once per
    seed.
    """

    lambda1: float = 1.0
    lambda2: float = 0.1
    step_size: float = 0.1
    max_iterations: int = 1000
    threshold: float = 0.0
    rng_seed: int = 0
    retarget_each_iteration: bool = False

    def __post_init__(self):
        if not (self.step_size > 0):
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class Candidate:
    """One generated input and how it came to be.

    ``manipulation`` is the cumulative brightness offset applied before
    clipping; ``objective_trace`` the objective value at the last
    evaluated point. ``target``/``target_config`` record the triplet the
    ascent aimed at, or None when the state was already fully covered.
    """

    input: np.ndarray
    seed_index: int
    manipulation: float
    iterations_used: int
    objective_trace: float
    target: Optional[Triplet]
    target_config: Optional[int]


def build_objective(target: tuple[Triplet, int], models: Sequence[NetworkModel],
                    seed_label: Optional[int], params: GenParams,
                    target_model: int = 0) -> ObjectiveSpec:
    """Objective for steering the target model toward one triplet configuration.

    Each of the three neurons gets a +1 sign when the configuration
    wants it activated and -1 otherwise, weighted lambda2. With at least
    two models and a seed label, a differential term pushes the target
    model's score for that label down (weighted lambda1) while pulling
    the other models' up.
    """
    triplet, config = target
    if not (0 <= config < 8):
        raise ObjectiveError(f"configuration must be in [0, 8), got {config}")
    if not (0 <= target_model < len(models)):
        raise ObjectiveError(f"target_model {target_model} out of range")
    model = models[target_model]
    if not (0 <= triplet.segment < len(model.coverage_layers) - 1):
        raise ObjectiveError(
            f"triplet segment {triplet.segment} invalid for model {model.name!r}"
        )
    b_i, b_j, b_q = config_bits(config)
    terms = tuple(
        CoverageTerm(
            neuron=NeuronId(model=target_model, layer=layer, neuron=neuron),
            sign=1.0 if bit else -1.0,
            weight=params.lambda2,
        )
        for layer, neuron, bit in (
            (triplet.segment, triplet.i, b_i),
            (triplet.segment, triplet.j, b_j),
            (triplet.segment + 1, triplet.q, b_q),
        )
    )
    differential = None
    if len(models) >= 2 and seed_label is not None:
        coeffs = tuple(-params.lambda1 if m == target_model else 1.0
                       for m in range(len(models)))
        differential = DifferentialTerm(label=int(seed_label), coefficients=coeffs,
                                        weight=1.0)
    return ObjectiveSpec(terms=terms, differential=differential,
                         target_model=target_model, coverage_weight=params.lambda2)


def _exhibits_config(models: Sequence[NetworkModel], spec: ObjectiveSpec,
                     target: tuple[Triplet, int], x: np.ndarray,
                     threshold: float) -> tuple[bool, bool]:
    """(target configuration reached, models disagree) at input x."""
    triplet, config = target
    traces = [forward(m, x) for m in models]
    t = traces[spec.target_model]
    bits = config_value(
        int(t.values[triplet.segment][triplet.i] > threshold),
        int(t.values[triplet.segment][triplet.j] > threshold),
        int(t.values[triplet.segment + 1][triplet.q] > threshold),
    )
    labels = [tr.predicted_label for tr in traces]
    return bits == config, any(l != labels[0] for l in labels)


def ascend(models: Sequence[NetworkModel], spec: ObjectiveSpec, seed,
           params: GenParams, target: Optional[tuple[Triplet, int]] = None,
           seed_index: int = -1) -> Candidate:
    """Brightness-only gradient ascent on the objective from a seed image.

    Stops when the target configuration shows up in the target model's
    trace, when the models disagree on the label, when the image stops
    moving (gradient mean zero or fully clipped), or after
    max_iterations.
    """
    x = np.clip(np.asarray(seed, dtype=np.float64), 0.0, 1.0)
    offset = 0.0
    iterations = 0
    value = 0.0
    for _ in range(params.max_iterations):
        if target is not None:
            hit, disagree = _exhibits_config(models, spec, target, x, params.threshold)
            if hit or disagree:
                break
        value, grad = evaluate_with_gradient(models, spec, x)
        direction = np.sign(grad.mean())
        if direction == 0.0:
            break
        step = params.step_size * float(direction)
        moved = np.clip(x + step, 0.0, 1.0)
        if np.array_equal(moved, x):
            break
        x = moved
        offset += step
        iterations += 1
    return Candidate(input=x, seed_index=seed_index, manipulation=offset,
                     iterations_used=iterations, objective_trace=value,
                     target=target[0] if target else None,
                     target_config=target[1] if target else None)


def _pick_target(state: CoverageState, rng_seed) -> Optional[tuple[Triplet, int]]:
    picks = uncovered_targets(state, rng_seed, 1)
    return picks[0] if picks else None


def generate(dataset: Dataset, models: Sequence[NetworkModel], state: CoverageState,
             params: GenParams, target_model: int = 0,
             ) -> Iterator[tuple[Candidate, CoverageState, OracleVerdict]]:
    """Run guided generation over every seed in the dataset, in order.

    Per seed: sample an uncovered (triplet, configuration) target, build
    the objective, ascend, then fold the candidate's activation trace
    into the coverage state and judge it across the models. Every seed
    yields a tuple whether or not the ascent moved the image; with no
    uncovered targets left the seed is passed through unmodified.

    The per-seed random stream is derived from (params.rng_seed,
    seed_index), so results do not depend on wall clock or interleaving.
    """
    model = models[target_model]
    for seed_index in range(len(dataset)):
        x = dataset.input_for(seed_index, model.input_shape)
        child_seed = np.random.SeedSequence([params.rng_seed, seed_index])
        if params.retarget_each_iteration:
            candidate = _ascend_retargeting(models, state, x, params,
                                            target_model, seed_index, child_seed)
        else:
            target = _pick_target(state, child_seed)
            if target is None:
                candidate = Candidate(input=x, seed_index=seed_index, manipulation=0.0,
                                      iterations_used=0, objective_trace=0.0,
                                      target=None, target_config=None)
            else:
                label = seed_label(models, x, target_model) if len(models) >= 2 else None
                spec = build_objective(target, models, label, params, target_model)
                candidate = ascend(models, spec, x, params, target=target,
                                   seed_index=seed_index)
        trace = forward(model, candidate.input)
        state.observe(trace)
        verdict = _judge_candidate(models, dataset, seed_index, candidate.input)
        yield candidate, state, verdict


def _ascend_retargeting(models, state: CoverageState, seed, params: GenParams,
                        target_model: int, seed_index: int,
                        child_seed: np.random.SeedSequence) -> Candidate:
    """Variant of :func:`ascend` that re-samples the triplet target each step.

    The coverage state is read, not written; observed progress lands in
    the state only through the caller's final observe of the candidate.
    """
    x = np.clip(np.asarray(seed, dtype=np.float64), 0.0, 1.0)
    offset = 0.0
    iterations = 0
    value = 0.0
    last_target = None
    streams = child_seed.spawn(params.max_iterations)
    for it in range(params.max_iterations):
        probe = state.copy()
        probe.observe(forward(models[target_model], x))
        target = _pick_target(probe, streams[it])
        if target is None:
            break
        last_target = target
        label = seed_label(models, x, target_model) if len(models) >= 2 else None
        spec = build_objective(target, models, label, params, target_model)
        hit, disagree = _exhibits_config(models, spec, target, x, params.threshold)
        if disagree:
            break
        value, grad = evaluate_with_gradient(models, spec, x)
        direction = np.sign(grad.mean())
        if direction == 0.0:
            break
        step = params.step_size * float(direction)
        moved = np.clip(x + step, 0.0, 1.0)
        if np.array_equal(moved, x):
            break
        x = moved
        offset += step
        iterations += 1
    return Candidate(input=x, seed_index=seed_index, manipulation=offset,
                     iterations_used=iterations, objective_trace=value,
                     target=last_target[0] if last_target else None,
                     target_config=last_target[1] if last_target else None)


def _judge_candidate(models, dataset: Dataset, seed_index: int, x) -> OracleVerdict:
    if len(models) >= 2:
        return judge(models, x)
    label = dataset.label_for(seed_index)
    if label is not None:
        return judge_with_reference(models, x, label)
    trace = forward(models[0], x)
    return verdict_from_labels([trace.predicted_label], [models[0].name])
