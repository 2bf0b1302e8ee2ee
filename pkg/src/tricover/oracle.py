"""Differential oracle: cross-model prediction agreement as a test verdict.

With several independently trained models for the same task, an input
whose predicted labels disagree is a corner case worth reporting, with
no need for ground-truth labels. When a reference label is available it
joins the vote as one more opinion, so a single model can still be
judged against it.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import OracleError
from .network import NetworkModel, forward


@dataclass(frozen=True)
class OracleVerdict:
    """Predicted labels per participant and the agreement outcome.

    ``majority_label`` is the strictly most common label, or None when
    the vote is tied. ``is_corner_case`` is true whenever the labels are
    not unanimous.
    """

    labels: tuple[int, ...]
    names: tuple[str, ...]
    is_corner_case: bool
    majority_label: Optional[int]

    def dissenters(self) -> tuple[str, ...]:
        """Names of participants whose label differs from the majority."""
        if self.majority_label is None:
            return self.names
        return tuple(n for n, l in zip(self.names, self.labels)
                     if l != self.majority_label)


def strict_majority(labels: Sequence[int]) -> Optional[int]:
    """The label held by more than half the voters, or None."""
    if not labels:
        return None
    label, count = Counter(labels).most_common(1)[0]
    return label if count * 2 > len(labels) else None


def verdict_from_labels(labels: Sequence[int], names: Sequence[str]) -> OracleVerdict:
    labels = tuple(int(l) for l in labels)
    names = tuple(str(n) for n in names)
    if len(labels) != len(names):
        raise OracleError(f"{len(labels)} labels for {len(names)} names")
    if not labels:
        raise OracleError("verdict requires at least one label")
    return OracleVerdict(
        labels=labels,
        names=names,
        is_corner_case=any(l != labels[0] for l in labels),
        majority_label=strict_majority(labels),
    )


def judge(models: Sequence[NetworkModel], input) -> OracleVerdict:
    """Run every model on the input and compare predicted labels."""
    if len(models) < 2:
        raise OracleError("differential judgement requires at least two models")
    labels = [forward(m, input).predicted_label for m in models]
    return verdict_from_labels(labels, [m.name for m in models])


def judge_with_reference(models: Sequence[NetworkModel], input,
                         reference_label: int) -> OracleVerdict:
    """Like :func:`judge`, with a known true label voting as ``"reference"``.

    Works with a single model, since the reference supplies the second
    opinion.
    """
    if not models:
        raise OracleError("judgement requires at least one model")
    labels = [forward(m, input).predicted_label for m in models]
    labels.append(int(reference_label))
    names = [m.name for m in models] + ["reference"]
    return verdict_from_labels(labels, names)


def adversarial_ratio(verdicts: Sequence[OracleVerdict]) -> float:
    """Fraction of verdicts that are corner cases."""
    if not verdicts:
        raise OracleError("adversarial ratio is undefined for zero verdicts")
    return sum(v.is_corner_case for v in verdicts) / len(verdicts)


def seed_label(models: Sequence[NetworkModel], input, target_model: int = 0) -> int:
    """Label to steer a differential objective away from.

    The strict-majority prediction across models when one exists,
    otherwise the target model's own prediction.
    """
    labels = [forward(m, input).predicted_label for m in models]
    maj = strict_majority(labels)
    return maj if maj is not None else labels[target_model]
