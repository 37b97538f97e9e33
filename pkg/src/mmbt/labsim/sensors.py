"""Confusion-matrix stand-ins for the trained per-modality classifiers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from mmbt.fusion import ModalityAccuracy, ModalityPrediction


class NoSurrogate(KeyError):
    pass


@dataclass(frozen=True)
class SensorSurrogate:
    accuracy: ModalityAccuracy

    @property
    def modality(self) -> str:
        return self.accuracy.modality

    def predict(self, truth: bool, rng: np.random.Generator) -> int:
        p_correct = self.accuracy.sensitivity if truth else self.accuracy.specificity
        correct = rng.random() < p_correct
        return int(truth) if correct else int(not truth)


def sense(
    condition: str,
    world,
    surrogates: Mapping[str, Sequence[SensorSurrogate]],
    rng: np.random.Generator,
) -> list[ModalityPrediction]:
    """One vote per configured modality against the world's ground truth.

    Draws are taken in modality order; the world is only read.
    """
    try:
        group = surrogates[condition]
    except KeyError:
        raise NoSurrogate(condition) from None
    truth = world.ground_truth(condition)
    return [ModalityPrediction(s.modality, s.predict(truth, rng)) for s in group]
