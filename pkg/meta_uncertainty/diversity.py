"""Class-diversity score: one minus the normalized likelihood-ratio imbalance degree."""
from dataclasses import dataclass
from typing import Any, Sequence, Tuple

import numpy as np

from .errors import DegenerateInputError, InputError


@dataclass(frozen=True)
class ClassCounts:
    """Per-class counts over an ordered class universe (zero-count classes included).

    Counts may be fractional; class-level outlierness feeds outlierness shares.
    """

    counts: np.ndarray
    class_universe: Tuple[Any, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.ndim != 1 or len(counts) != len(self.class_universe):
            raise InputError("counts must have one entry per class in the universe")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise InputError("counts must be finite and nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @classmethod
    def from_labels(cls, labels: Sequence[Any], class_universe: Sequence[Any]) -> "ClassCounts":
        universe = tuple(class_universe)
        index = {c: i for i, c in enumerate(universe)}
        counts = np.zeros(len(universe))
        for label in labels:
            if label not in index:
                raise InputError(f"Label '{label}' is not in the class universe {list(universe)}")
            counts[index[label]] += 1
        return cls(counts, universe)


def lrid(counts: ClassCounts) -> float:
    """Likelihood-ratio imbalance degree against the uniform distribution.

    ``-2 * sum(m_c * ln(b_c / p_c))`` with ``b_c = 1/C`` and ``p_c = m_c / M``;
    zero-count classes contribute nothing.
    """
    n_classes = len(counts.class_universe)
    if n_classes < 2:
        raise DegenerateInputError(f"LRID needs at least 2 classes, got {n_classes}")
    total = counts.total
    if total <= 0:
        raise DegenerateInputError("LRID needs a positive total count")
    m = counts.counts[counts.counts > 0]
    return float(2.0 * np.sum(m * np.log(m * n_classes / total)))


def diversity(labels: Sequence[Any], class_universe: Sequence[Any]) -> float:
    """0 when every label is identical, 1 when labels are balanced over the universe."""
    if len(labels) == 0:
        raise InputError("diversity() needs at least one label")
    return diversity_of_counts(ClassCounts.from_labels(labels, class_universe))


def diversity_of_counts(counts: ClassCounts) -> float:
    worst = 2.0 * counts.total * np.log(len(counts.class_universe))
    return float(np.clip(1.0 - lrid(counts) / worst, 0.0, 1.0))


def diversity_from_counts(counts: np.ndarray) -> np.ndarray:
    """Row-wise diversity for a ``(rows, C)`` matrix of (possibly fractional) counts."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    n_classes = counts.shape[1]
    if n_classes < 2:
        raise DegenerateInputError(f"Diversity needs at least 2 classes, got {n_classes}")
    totals = counts.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise DegenerateInputError("Every row needs a positive total count")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, counts * np.log(counts * n_classes / totals), 0.0)
    ratio = terms.sum(axis=1) / (totals[:, 0] * np.log(n_classes))
    return np.clip(1.0 - ratio, 0.0, 1.0)
