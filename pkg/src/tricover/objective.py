"""Differentiable scalar objectives over one or more networks.

An objective is a weighted sum of coverage-neuron activations (each
pushed toward or away from activation by its sign) plus an optional
differential term that rewards divergence between models on one output
label. Gradients with respect to the input are computed by reverse-mode
accumulation through each model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ObjectiveError
from .network import NetworkModel, _backward_from_seeds, _check_input, _run


@dataclass(frozen=True)
class NeuronId:
    """One coverage neuron: model index, coverage-layer ordinal, neuron index.

    ``layer`` indexes into the model's coverage-layer list, not the raw
    layer stack.
    """

    model: int
    layer: int
    neuron: int


@dataclass(frozen=True)
class CoverageTerm:
    """One coverage-neuron activation summand, ``weight * sign * value``."""

    neuron: NeuronId
    sign: float
    weight: float


@dataclass(frozen=True)
class DifferentialTerm:
    """Per-model weighted sum of the output score for one label.

    ``coefficients[m]`` multiplies model m's final-layer output at
    ``label``; a negative coefficient on one model and positive on the
    rest rewards inputs the models disagree on.
    """

    label: int
    coefficients: tuple[float, ...]
    weight: float = 1.0


@dataclass(frozen=True)
class ObjectiveSpec:
    """A fully built objective: coverage terms plus optional differential term.

    ``coverage_weight`` echoes the multiplier already baked into the
    coverage terms' weights; it is carried for reporting only.
    """

    terms: tuple[CoverageTerm, ...]
    differential: Optional[DifferentialTerm]
    target_model: int
    coverage_weight: float


def _validate(models: Sequence[NetworkModel], spec: ObjectiveSpec) -> None:
    if not models:
        raise ObjectiveError("objective requires at least one model")
    if not (0 <= spec.target_model < len(models)):
        raise ObjectiveError(
            f"target_model {spec.target_model} out of range for {len(models)} models"
        )
    base = models[0].input_shape
    for m in models[1:]:
        if m.input_shape != base:
            raise ObjectiveError(
                f"models disagree on input shape: {base} vs {m.input_shape} ({m.name!r})"
            )
    for t in spec.terms:
        nid = t.neuron
        if not (0 <= nid.model < len(models)):
            raise ObjectiveError(f"term references model {nid.model}, have {len(models)}")
        model = models[nid.model]
        if not (0 <= nid.layer < len(model.coverage_layers)):
            raise ObjectiveError(
                f"coverage layer {nid.layer} out of range for model {model.name!r} "
                f"({len(model.coverage_layers)} coverage layers)"
            )
        size = model.coverage_layer_sizes[nid.layer]
        if not (0 <= nid.neuron < size):
            raise ObjectiveError(
                f"neuron {nid.neuron} out of range for coverage layer {nid.layer} "
                f"of model {model.name!r} (size {size})"
            )
        if not (np.isfinite(t.sign) and np.isfinite(t.weight)):
            raise ObjectiveError(f"non-finite term weighting on {nid}")
    if spec.differential is not None:
        d = spec.differential
        if len(d.coefficients) != len(models):
            raise ObjectiveError(
                f"differential term has {len(d.coefficients)} coefficients "
                f"for {len(models)} models"
            )
        for m in models:
            out = m.output_shapes[-1]
            if len(out) != 1 or not (0 <= d.label < out[0]):
                raise ObjectiveError(
                    f"label {d.label} invalid for model {m.name!r} output shape {out}"
                )


def _neuron_value(model: NetworkModel, outputs, layer_ordinal: int, neuron: int) -> float:
    layer = model.coverage_layers[layer_ordinal]
    out = outputs[layer]
    if out.ndim == 1:
        return float(out[neuron])
    return float(out[neuron].mean())


def _neuron_seed(model: NetworkModel, layer_ordinal: int, neuron: int, scale: float,
                 seeds: dict) -> None:
    """Add d(scale * coverage neuron)/d(layer output) into the seed map."""
    layer = model.coverage_layers[layer_ordinal]
    shape = model.output_shapes[layer]
    g = seeds.get(layer)
    if g is None:
        g = np.zeros(shape)
        seeds[layer] = g
    if len(shape) == 1:
        g[neuron] += scale
    else:
        g[neuron, :, :] += scale / (shape[1] * shape[2])


def evaluate_with_gradient(models: Sequence[NetworkModel], spec: ObjectiveSpec,
                           input) -> tuple[float, np.ndarray]:
    """Objective value and its gradient with respect to the input.

    One forward and at most one backward pass per participating model.
    """
    _validate(models, spec)
    x = _check_input(models[0], input)

    per_model_terms: dict[int, list[CoverageTerm]] = {}
    for t in spec.terms:
        per_model_terms.setdefault(t.neuron.model, []).append(t)
    diff = spec.differential

    value = 0.0
    grad = np.zeros_like(x)
    for m, model in enumerate(models):
        terms = per_model_terms.get(m, ())
        coeff = diff.weight * diff.coefficients[m] if diff is not None else 0.0
        if not terms and coeff == 0.0:
            continue
        outputs, caches = _run(model, x)
        seeds: dict[int, np.ndarray] = {}
        for t in terms:
            value += t.weight * t.sign * _neuron_value(model, outputs, t.neuron.layer,
                                                       t.neuron.neuron)
            _neuron_seed(model, t.neuron.layer, t.neuron.neuron,
                         t.weight * t.sign, seeds)
        if coeff != 0.0:
            last = len(model.layers) - 1
            value += coeff * float(outputs[last][diff.label])
            g = seeds.get(last)
            if g is None:
                g = np.zeros(model.output_shapes[last])
                seeds[last] = g
            g[diff.label] += coeff
        grad += _backward_from_seeds(model, caches, seeds)
    return value, grad


def objective_value(models: Sequence[NetworkModel], spec: ObjectiveSpec, input) -> float:
    """Objective value only (no gradient work beyond the forward passes)."""
    _validate(models, spec)
    x = _check_input(models[0], input)
    per_model_terms: dict[int, list[CoverageTerm]] = {}
    for t in spec.terms:
        per_model_terms.setdefault(t.neuron.model, []).append(t)
    diff = spec.differential
    value = 0.0
    for m, model in enumerate(models):
        terms = per_model_terms.get(m, ())
        coeff = diff.weight * diff.coefficients[m] if diff is not None else 0.0
        if not terms and coeff == 0.0:
            continue
        outputs, _ = _run(model, x)
        for t in terms:
            value += t.weight * t.sign * _neuron_value(model, outputs, t.neuron.layer,
                                                       t.neuron.neuron)
        if coeff != 0.0:
            value += coeff * float(outputs[-1][diff.label])
    return value


def input_gradient(models: Sequence[NetworkModel], spec: ObjectiveSpec, input) -> np.ndarray:
    """Gradient of the objective with respect to the input."""
    return evaluate_with_gradient(models, spec, input)[1]
