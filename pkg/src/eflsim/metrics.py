"""Confusion matrices and the four classification scores used everywhere.

Scores come in two averaging modes: ``positive_class`` applies the binary
definitions to the configured positive label literally, ``weighted``
averages per-label scores by true-label support. Accuracy is identical in
both. Zero denominators never raise; they yield 0 with a flag so a
degenerate node cannot abort a federation round.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

POSITIVE_CLASS = "positive_class"
WEIGHTED = "weighted"


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[t][p] = number of samples with true label t predicted as p."""

    counts: np.ndarray
    positive_label: int = 1

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ContractViolation(f"confusion counts must be square, got {counts.shape}")
        if counts.min() < 0:
            raise ContractViolation("confusion counts must be non-negative")
        if not (0 <= self.positive_label < counts.shape[0]):
            raise ContractViolation(
                f"positive label {self.positive_label} outside [0, {counts.shape[0]})"
            )
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def binary_counts(self) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) with respect to the positive label."""
        pos = self.positive_label
        tp = int(self.counts[pos, pos])
        fp = int(self.counts[:, pos].sum() - tp)
        fn = int(self.counts[pos, :].sum() - tp)
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn


@dataclass(frozen=True)
class ScoreSet:
    precision: float
    recall: float
    f1: float
    accuracy: float
    averaging: str = POSITIVE_CLASS
    zero_denominator: bool = False

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "averaging": self.averaging,
            "zero_denominator": self.zero_denominator,
        }


def confusion(
    predictions: np.ndarray,
    truths: np.ndarray,
    n_classes: int,
    positive_label: int = 1,
) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape or predictions.ndim != 1 or predictions.size < 1:
        raise ContractViolation(
            f"predictions and truths must be equal-length non-empty vectors, got "
            f"{predictions.shape} vs {truths.shape}"
        )
    for name, arr in (("predictions", predictions), ("truths", truths)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ContractViolation(f"{name} contain labels outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truths, predictions), 1)
    return ConfusionMatrix(counts, positive_label)


def _ratio(num: int | float, den: int | float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def scores(cm: ConfusionMatrix, averaging: str = POSITIVE_CLASS) -> ScoreSet:
    if cm.total < 1:
        raise ContractViolation("cannot score an empty confusion matrix")
    accuracy = float(np.trace(cm.counts)) / cm.total

    if averaging == POSITIVE_CLASS:
        tp, fp, fn, _ = cm.binary_counts()
        precision, flag_p = _ratio(tp, tp + fp)
        recall, flag_r = _ratio(tp, tp + fn)
        f1, flag_f = _ratio(2.0 * precision * recall, precision + recall)
        flagged = flag_p or flag_r or flag_f
        return ScoreSet(precision, recall, f1, accuracy, POSITIVE_CLASS, flagged)

    if averaging == WEIGHTED:
        support = cm.counts.sum(axis=1)
        weights = support / cm.total
        precision = recall = f1 = 0.0
        flagged = False
        for label in range(cm.n_classes):
            tp = int(cm.counts[label, label])
            p, flag_p = _ratio(tp, int(cm.counts[:, label].sum()))
            r, flag_r = _ratio(tp, int(support[label]))
            f, flag_f = _ratio(2.0 * p * r, p + r)
            if support[label] > 0:
                flagged = flagged or flag_p or flag_r or flag_f
            precision += weights[label] * p
            recall += weights[label] * r
            f1 += weights[label] * f
        return ScoreSet(float(precision), float(recall), float(f1), accuracy, WEIGHTED, flagged)

    raise ContractViolation(f"unknown averaging mode {averaging!r}")


def accuracy_of(predictions: np.ndarray, truths: np.ndarray, n_classes: int) -> float:
    return scores(confusion(predictions, truths, n_classes)).accuracy
