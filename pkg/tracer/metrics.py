"""Instance segmentation scores: Dice, best-Dice specificity/sensitivity, SBD and |DiC|."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tracer.errors import InvalidArgumentError


@dataclass(frozen=True)
class InstanceSetPair:
    prediction: Sequence[np.ndarray]
    truth: Sequence[np.ndarray]
    smooth: float = 1.0


@dataclass(frozen=True)
class EvalReport:
    specificity: float
    sensitivity: float
    sbd: float
    dic: int

    def to_dict(self) -> dict:
        return {
            "specificity": self.specificity,
            "sensitivity": self.sensitivity,
            "sbd": self.sbd,
            "dic": self.dic,
        }


def dice(a: np.ndarray, b: np.ndarray, smooth: float = 1.0) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"Mask extents differ: {a.shape} vs {b.shape}")
    overlap = int(np.count_nonzero(a & b))
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    denominator = total + smooth
    if denominator == 0:
        return 1.0
    return (2 * overlap + smooth) / denominator


def _mean_best_dice(side: Sequence[np.ndarray], other: Sequence[np.ndarray], smooth: float) -> float:
    """Mean over ``side`` of the best Dice against any mask of ``other``."""
    if not side or not other:
        return 0.0
    return float(np.mean([max(dice(a, b, smooth) for b in other) for a in side]))


def evaluate_instances(pair: InstanceSetPair) -> EvalReport:
    """Symmetric best Dice between predicted and true instances.

    A side with no instances scores 0 against a nonempty other side; two
    empty sides agree perfectly.
    """
    prediction, truth = list(pair.prediction), list(pair.truth)
    shapes = {np.shape(m) for m in prediction + truth}
    if len(shapes) > 1:
        raise InvalidArgumentError(f"Instance masks have differing extents: {sorted(shapes)}")
    dic = abs(len(prediction) - len(truth))
    if not prediction and not truth:
        return EvalReport(specificity=1.0, sensitivity=1.0, sbd=1.0, dic=0)
    specificity = _mean_best_dice(prediction, truth, pair.smooth)
    sensitivity = _mean_best_dice(truth, prediction, pair.smooth)
    return EvalReport(
        specificity=specificity,
        sensitivity=sensitivity,
        sbd=min(specificity, sensitivity),
        dic=dic,
    )


def instances_from_label_map(labels: np.ndarray) -> list[np.ndarray]:
    """One binary mask per nonzero label, in ascending label order."""
    labels = np.asarray(labels)
    return [labels == value for value in np.unique(labels[labels > 0])]
