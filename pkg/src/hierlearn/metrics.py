"""Partition and classifier evaluation: adjusted Rand index, risk, efficiency."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "adjusted_rand_index",
    "EvalRecord",
    "empirical_risk",
    "learning_efficiency",
    "AggregateResult",
    "aggregate",
]


def adjusted_rand_index(p: Sequence[int], q: Sequence[int]) -> float:
    """Adjusted Rand index between two partitions of the same items.

    Computed from the contingency table; 1 for identical partitions, 0 in
    expectation for a random size-matched partition. In the degenerate case
    where the expected index equals the maximum index (both partitions
    all-singletons, or both all-in-one) the convention is 1 if the partitions
    are identical and 0 otherwise.
    """
    p = list(p)
    q = list(q)
    if len(p) != len(q):
        raise ValueError("partitions must cover the same items")
    n = len(p)
    if n == 0:
        raise ValueError("partitions must be non-empty")

    joint: dict[tuple[int, int], int] = {}
    rows: dict[int, int] = {}
    cols: dict[int, int] = {}
    for a, b in zip(p, q):
        key = (a, b)
        joint[key] = joint.get(key, 0) + 1
        rows[a] = rows.get(a, 0) + 1
        cols[b] = cols.get(b, 0) + 1

    index = sum(c * (c - 1) for c in joint.values()) / 2.0
    sum_rows = sum(c * (c - 1) for c in rows.values()) / 2.0
    sum_cols = sum(c * (c - 1) for c in cols.values()) / 2.0
    total_pairs = n * (n - 1) / 2.0
    if total_pairs == 0:
        return 1.0
    expected = sum_rows * sum_cols / total_pairs
    maximum = 0.5 * (sum_rows + sum_cols)
    if maximum == expected:
        same = len(rows) == len(cols) == len(joint)
        return 1.0 if same else 0.0
    return (index - expected) / (maximum - expected)


@dataclass(frozen=True)
class EvalRecord:
    """Held-out 0-1 performance of one decision rule."""

    accuracy: float
    risk: float
    n_test: int
    method: str = ""

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        if self.risk + self.accuracy != 1.0:
            raise ValueError("risk and accuracy must sum to 1 exactly")


def empirical_risk(predictions: Sequence[int], truth: Sequence[int], method: str = "") -> EvalRecord:
    """Misclassification fraction under 0-1 loss, with accuracy = 1 - risk."""
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("predictions and truth must be equal-length vectors")
    if pred.size == 0:
        raise ValueError("cannot evaluate on an empty test set")
    accuracy = float(np.count_nonzero(pred == true)) / pred.size
    return EvalRecord(accuracy=accuracy, risk=1.0 - accuracy, n_test=int(pred.size), method=method)


def learning_efficiency(risk_h: float, risk_ref: float) -> float:
    """Ratio of risks; values above 1 mean the reference rule is preferred."""
    if risk_ref <= 0.0:
        raise ZeroDivisionError("perfect reference: reference risk must be positive")
    return risk_h / risk_ref


@dataclass(frozen=True)
class AggregateResult:
    """Mean and standard error over replicates."""

    mean: float
    se: float
    reps: int

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("need at least one replicate")


def aggregate(records: Sequence[float]) -> AggregateResult:
    """Mean and SE (sample std / sqrt(n)); a single value reports SE 0."""
    values = np.asarray(list(records), dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot aggregate an empty list")
    mean = float(values.mean())
    if values.size == 1:
        return AggregateResult(mean=mean, se=0.0, reps=1)
    se = float(values.std(ddof=1) / math.sqrt(values.size))
    return AggregateResult(mean=mean, se=se, reps=int(values.size))
