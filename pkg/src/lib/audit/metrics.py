import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, Mapping, Sequence

import numpy as np

from .dataset import Dataset, ProtectedAttribute, SubgroupIndex
from .errors import ConfigError, LabelsRequired, UndefinedRate

logger = logging.getLogger(__name__)


class Condition(StrEnum):
    """
    Which event rate a metric compares. Each kind selects the qualifying records
    (denominator) and the favorable ones among them (numerator).
    """
    SELECTION_RATE = 'selection_rate'
    TRUE_POSITIVE_RATE = 'true_positive_rate'
    FALSE_POSITIVE_RATE = 'false_positive_rate'
    ACCURACY = 'accuracy'

    @property
    def requires_labels(self) -> bool:
        return self is not Condition.SELECTION_RATE

    def masks(self, predictions: np.ndarray, labels: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        predictions = np.asarray(predictions, dtype=bool)
        if self is Condition.SELECTION_RATE:
            return np.ones(len(predictions), dtype=bool), predictions
        positive = labels == 1
        if self is Condition.TRUE_POSITIVE_RATE:
            return positive, positive & predictions
        if self is Condition.FALSE_POSITIVE_RATE:
            negative = labels == 0
            return negative, negative & predictions
        return np.ones(len(predictions), dtype=bool), predictions == positive


@dataclass(frozen=True)
class GroupRate:
    numerator: int
    denominator: int
    alpha: float = 0.0

    @property
    def defined(self) -> bool:
        return self.denominator + 2 * self.alpha > 0

    @property
    def value(self) -> float | None:
        if not self.defined:
            return None
        return (self.numerator + self.alpha) / (self.denominator + 2 * self.alpha)


@dataclass(frozen=True)
class MetricResult:
    subject: str
    value: float
    epsilon: float = 0.0
    supports: Mapping[str, int] = field(default_factory=dict)
    signed_difference: float | None = None
    flags: tuple[str, ...] = ()
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return self.value > 0

    def to_dict(self) -> dict:
        out = {
            'subject': self.subject,
            'value': self.value,
            'epsilon': self.epsilon,
            'violated': self.violated,
            'supports': dict(self.supports),
        }
        if self.signed_difference is not None:
            out['signed_difference'] = self.signed_difference
        if self.flags:
            out['flags'] = list(self.flags)
        if self.details:
            out['details'] = dict(self.details)
        return out


def check_epsilon(epsilon: float) -> float:
    if epsilon < 0 or math.isnan(epsilon):
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    return float(epsilon)


def check_alpha(alpha: float) -> float:
    if alpha < 0 or math.isnan(alpha):
        raise ConfigError(f"smoothing alpha must be >= 0, got {alpha}")
    return float(alpha)


def require_labels(dataset: Dataset, condition: Condition, rows: np.ndarray | None = None):
    if not condition.requires_labels:
        return
    if dataset.labels is None:
        raise LabelsRequired(str(condition))
    labels = dataset.labels if rows is None else dataset.labels[rows]
    if np.any(labels < 0):
        raise LabelsRequired(str(condition))


def estimate_rate(
        dataset: Dataset,
        condition: Condition,
        alpha: float = 0.0,
        rows: Sequence[int] | np.ndarray | None = None,
) -> GroupRate:
    """Empirical (optionally smoothed) rate of the condition's event over a record view."""
    alpha = check_alpha(alpha)
    if rows is not None:
        rows = np.asarray(rows, dtype=np.intp)
    require_labels(dataset, condition, rows)
    predictions = dataset.predictions if rows is None else dataset.predictions[rows]
    labels = None
    if dataset.labels is not None:
        labels = dataset.labels if rows is None else dataset.labels[rows]
    denominator, numerator = condition.masks(predictions, labels)
    return GroupRate(int(np.count_nonzero(numerator)), int(np.count_nonzero(denominator)), alpha)


def subgroup_counts(dataset: Dataset, index: SubgroupIndex, condition: Condition) -> tuple[np.ndarray, np.ndarray]:
    """Per-subgroup (numerator, denominator) counts in index order, one pass over the records."""
    require_labels(dataset, condition)
    denominator, numerator = condition.masks(dataset.predictions, dataset.labels)
    size = len(index.keys)
    num = np.bincount(index.assignment, weights=numerator.astype(float), minlength=size).astype(np.int64)
    den = np.bincount(index.assignment, weights=denominator.astype(float), minlength=size).astype(np.int64)
    return num, den


def complement_name(attribute: ProtectedAttribute) -> str:
    if attribute.is_binary:
        return attribute.domain[1 - attribute.protected_index]
    return f"not {attribute.protected_value}"


def group_rates(
        dataset: Dataset,
        attribute: str,
        condition: Condition,
        alpha: float = 0.0,
) -> tuple[ProtectedAttribute, GroupRate, GroupRate]:
    """Rates of the protected group g and of its complement, in that order."""
    j = dataset.schema.index_of(attribute)
    spec = dataset.schema.attributes[j]
    if spec.protected_value is None:
        raise ConfigError(f"attribute '{attribute}' has no protected value; binarize it first")
    in_group = dataset.codes[:, j] == spec.protected_index
    protected = estimate_rate(dataset, condition, alpha, np.flatnonzero(in_group))
    rest = estimate_rate(dataset, condition, alpha, np.flatnonzero(~in_group))
    if not protected.defined:
        raise UndefinedRate(f"{attribute}={spec.protected_value}")
    if not rest.defined:
        raise UndefinedRate(f"{attribute}={complement_name(spec)}")
    return spec, protected, rest


def group_discrimination(
        dataset: Dataset,
        attribute: str,
        condition: Condition = Condition.SELECTION_RATE,
        epsilon: float = 0.0,
        alpha: float = 0.0,
) -> MetricResult:
    """
    |rate(g) - rate(g-bar)| - epsilon for one protected attribute. The signed
    difference rate(g-bar) - rate(g) is kept so the direction is not lost.
    """
    epsilon = check_epsilon(epsilon)
    spec, protected, rest = group_rates(dataset, attribute, condition, alpha)
    difference = rest.value - protected.value
    other = complement_name(spec)
    return MetricResult(
        subject=attribute,
        value=abs(difference) - epsilon,
        epsilon=epsilon,
        supports={
            spec.protected_value: protected.denominator,
            f"{spec.protected_value} favorable": protected.numerator,
            other: rest.denominator,
            f"{other} favorable": rest.numerator,
        },
        signed_difference=difference,
        details={
            'condition': str(condition),
            'rates': {spec.protected_value: protected.value, other: rest.value},
        },
    )


@dataclass(frozen=True)
class GroupBreakdown:
    results: tuple[MetricResult, ...]

    @property
    def violated(self) -> bool:
        return any(r.violated for r in self.results)

    def to_dict(self) -> dict:
        return {'attributes': [r.to_dict() for r in self.results]}


def group_discrimination_all(
        dataset: Dataset,
        attributes: Sequence[str],
        condition: Condition = Condition.SELECTION_RATE,
        epsilon: float = 0.0,
        alpha: float = 0.0,
) -> GroupBreakdown:
    return GroupBreakdown(tuple(group_discrimination(dataset, a, condition, epsilon, alpha) for a in attributes))
