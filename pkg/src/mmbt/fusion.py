"""Weighted voting over binary per-modality predictions.

A fused condition succeeds when the weighted sum of votes reaches the
threshold. Weights sum to one, so the sum is already an average; the
``strict_eq1`` switch additionally divides by the number of modalities,
which is only useful for auditing against the literal formula.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

WEIGHT_SUM_TOL = 1e-9
TIE_TOL = 1e-12
MAX_ORACLE_MODALITIES = 20


class FusionError(ValueError):
    pass


class PolicyError(FusionError):
    pass


class ModalityMismatch(FusionError):
    pass


class EmptyAccuracies(FusionError):
    pass


class TooManyModalities(FusionError):
    pass


@dataclass(frozen=True)
class FusionPolicy:
    modalities: tuple[str, ...]
    weights: tuple[float, ...]
    threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.modalities:
            raise PolicyError("a fusion policy needs at least one modality")
        if len(self.modalities) != len(self.weights):
            raise PolicyError(
                f"{len(self.modalities)} modalities but {len(self.weights)} weights"
            )
        if len(set(self.modalities)) != len(self.modalities):
            raise PolicyError(f"duplicate modality in {list(self.modalities)}")
        if any(not math.isfinite(w) or w < 0 for w in self.weights):
            raise PolicyError(f"weights must be finite and non-negative: {list(self.weights)}")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise PolicyError(f"weights sum to {total!r}, not 1")
        if not (0.0 <= self.threshold <= 1.0):
            raise PolicyError(f"threshold {self.threshold} outside [0, 1]")

    @property
    def n(self) -> int:
        return len(self.modalities)


@dataclass(frozen=True)
class ModalityPrediction:
    modality: str
    s: int

    def __post_init__(self):
        if self.s not in (0, 1):
            raise ValueError(f"vote must be 0 or 1, got {self.s!r}")


@dataclass(frozen=True)
class ModalityAccuracy:
    modality: str
    sensitivity: float
    specificity: float

    def __post_init__(self):
        for label, p in (("sensitivity", self.sensitivity), ("specificity", self.specificity)):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{self.modality}: {label} {p} outside [0, 1]")

    @classmethod
    def symmetric(cls, modality: str, accuracy: float) -> ModalityAccuracy:
        return cls(modality, accuracy, accuracy)

    @property
    def balanced(self) -> float:
        return (self.sensitivity + self.specificity) / 2


@dataclass(frozen=True)
class FusedAccuracy:
    sensitivity: float
    specificity: float
    accuracy: float


Predictions = Union[Sequence[ModalityPrediction], Mapping[str, int]]


def _ordered_votes(predictions: Predictions, policy: FusionPolicy) -> list[int]:
    if isinstance(predictions, Mapping):
        pairs = list(predictions.items())
    else:
        pairs = [(p.modality, p.s) for p in predictions]
    by_modality: dict[str, int] = {}
    for modality, s in pairs:
        if modality in by_modality:
            raise ModalityMismatch(f"duplicate prediction for {modality!r}")
        by_modality[modality] = s
    expected = set(policy.modalities)
    if set(by_modality) != expected:
        missing = sorted(expected - set(by_modality))
        extra = sorted(set(by_modality) - expected)
        raise ModalityMismatch(f"missing={missing} extra={extra}")
    return [by_modality[m] for m in policy.modalities]


def weighted_sum(predictions: Predictions, policy: FusionPolicy, strict_eq1: bool = False) -> float:
    votes = _ordered_votes(predictions, policy)
    total = math.fsum(w * s for w, s in zip(policy.weights, votes))
    return total / policy.n if strict_eq1 else total


def decide(total: float, policy: FusionPolicy) -> bool:
    # ties count as success
    return total >= policy.threshold - TIE_TOL


def vote(predictions: Predictions, policy: FusionPolicy, strict_eq1: bool = False) -> bool:
    """True when the fused condition is judged successful."""
    return decide(weighted_sum(predictions, policy, strict_eq1), policy)


def default_weights(accuracies: Sequence[ModalityAccuracy]) -> list[float]:
    """Weights proportional to each modality's balanced accuracy."""
    if not accuracies:
        raise EmptyAccuracies("default_weights needs at least one modality")
    balanced = [a.balanced for a in accuracies]
    if any(b <= 0 for b in balanced):
        raise FusionError("every modality needs positive balanced accuracy")
    total = math.fsum(balanced)
    return [b / total for b in balanced]


def _align(policy: FusionPolicy, accuracies: Iterable[ModalityAccuracy]) -> list[ModalityAccuracy]:
    by_modality = {a.modality: a for a in accuracies}
    if set(by_modality) != set(policy.modalities):
        raise ModalityMismatch(
            f"accuracies for {sorted(by_modality)} do not match policy {list(policy.modalities)}"
        )
    return [by_modality[m] for m in policy.modalities]


def fused_accuracy(
    policy: FusionPolicy,
    accuracies: Iterable[ModalityAccuracy],
    prior_success: float = 0.5,
    strict_eq1: bool = False,
) -> FusedAccuracy:
    """Exact fused sensitivity/specificity by enumerating all 2**N vote vectors.

    Modality errors are assumed independent given the ground truth.
    """
    if policy.n > MAX_ORACLE_MODALITIES:
        raise TooManyModalities(f"{policy.n} modalities; the oracle is limited to {MAX_ORACLE_MODALITIES}")
    if not (0.0 <= prior_success <= 1.0):
        raise ValueError(f"prior_success {prior_success} outside [0, 1]")
    accs = _align(policy, accuracies)
    sens_terms = []
    spec_terms = []
    for votes in itertools.product((0, 1), repeat=policy.n):
        p_given_success = 1.0
        p_given_failure = 1.0
        for a, s in zip(accs, votes):
            p_given_success *= a.sensitivity if s else 1.0 - a.sensitivity
            p_given_failure *= 1.0 - a.specificity if s else a.specificity
        if vote(dict(zip(policy.modalities, votes)), policy, strict_eq1):
            sens_terms.append(p_given_success)
        else:
            spec_terms.append(p_given_failure)
    sensitivity = math.fsum(sens_terms)
    specificity = math.fsum(spec_terms)
    accuracy = prior_success * sensitivity + (1.0 - prior_success) * specificity
    return FusedAccuracy(sensitivity, specificity, accuracy)
