import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from .cumulative import CombineOperator
from .dataset import Dataset, SubgroupIndex, SubgroupKey
from .errors import LabelsRequired, NoEligibleSubgroup
from .metrics import Condition, GroupRate, MetricResult, check_alpha, check_epsilon, subgroup_counts

logger = logging.getLogger(__name__)

BELOW_MIN_SUPPORT = 'below min_support'
UNDEFINED_RATE = 'undefined rate'
NO_NEGATIVE_SUPPORT = 'no negative support'
ZERO_RATE = 'zero rate'


@dataclass(frozen=True)
class Exclusion:
    key: SubgroupKey
    reason: str

    def to_dict(self) -> dict:
        return {'subgroup': self.key.label, 'reason': self.reason}


@dataclass(frozen=True)
class PairResult:
    first: SubgroupKey
    second: SubgroupKey
    result: MetricResult

    def to_dict(self) -> dict:
        return {'pair': [self.first.label, self.second.label], **self.result.to_dict()}


@dataclass(frozen=True)
class SubgroupMetricSet:
    metric: str
    subgroups: tuple[SubgroupKey, ...] = ()
    results: tuple[MetricResult, ...] = ()
    pairs: tuple[PairResult, ...] = ()
    combined: MetricResult | None = None
    excluded: tuple[Exclusion, ...] = ()
    arg_min: SubgroupKey | None = None
    arg_max: SubgroupKey | None = None
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        if self.combined is not None:
            return self.combined.violated
        return any(r.violated for r in self.results)

    def result(self, key: SubgroupKey) -> MetricResult:
        return self.results[self.subgroups.index(key)]

    def pair(self, first: SubgroupKey, second: SubgroupKey) -> MetricResult:
        wanted = {first, second}
        for pair in self.pairs:
            if {pair.first, pair.second} == wanted:
                return pair.result
        raise KeyError((first, second))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {'metric': self.metric}
        out['combined'] = self.combined.to_dict() if self.combined is not None else None
        if self.arg_min is not None:
            out['arg_min'] = self.arg_min.label
        if self.arg_max is not None:
            out['arg_max'] = self.arg_max.label
        if self.results:
            out['subgroups'] = [r.to_dict() for r in self.results]
        if self.pairs:
            out['pairs'] = [p.to_dict() for p in self.pairs]
        out['excluded'] = [e.to_dict() for e in self.excluded]
        if self.details:
            out['details'] = dict(self.details)
        return out


class PairOverride(BaseModel):
    model_config = ConfigDict(frozen=True)

    pair: tuple[str, str]
    epsilon: float = Field(ge=0)


class PairEpsilonPolicy(BaseModel):
    """Default epsilon plus overrides per unordered subgroup pair (dashed labels)."""
    model_config = ConfigDict(frozen=True)

    default: float = Field(default=0.0, ge=0)
    overrides: tuple[PairOverride, ...] = ()

    _lookup: dict[frozenset, float] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        self._lookup.update({frozenset(o.pair): o.epsilon for o in self.overrides})

    @classmethod
    def from_ratio(cls, ratio: float) -> 'PairEpsilonPolicy':
        """`from_ratio(0.8)` bounds every pair at 1/0.8, the four-fifths rule."""
        return cls(default=math.log(1 / ratio))

    def epsilon_for(self, first: SubgroupKey, second: SubgroupKey) -> float:
        return self._lookup.get(frozenset((first.label, second.label)), self.default)


def _combine(
        metric: str,
        keys: list[SubgroupKey],
        results: list[MetricResult],
        operator: CombineOperator,
        epsilon: float,
        excluded: list[Exclusion],
        extra: Mapping[str, Any],
) -> SubgroupMetricSet:
    combined = None
    arg_max = None
    if results:
        values = [r.value for r in results]
        value = operator.apply(values)
        arg_max = keys[values.index(max(values))]
        combined = MetricResult(
            subject=f"{metric}[{operator}]",
            value=value,
            epsilon=epsilon,
            supports={'subgroups': len(results)},
            details={'operator': str(operator)},
        )
    return SubgroupMetricSet(
        metric=metric,
        subgroups=tuple(keys),
        results=tuple(results),
        combined=combined,
        excluded=tuple(excluded),
        arg_max=arg_max,
        details=dict(extra),
    )


def spsf(
        dataset: Dataset,
        index: SubgroupIndex,
        epsilon: float = 0.0,
        operator: CombineOperator = CombineOperator.MAX,
) -> SubgroupMetricSet:
    """Subgroup deviation from the population selection rate, weighted by subgroup mass."""
    epsilon = check_epsilon(epsilon)
    n = dataset.n
    if n == 0:
        return _combine('spsf', [], [], operator, epsilon, [], {})
    accepted, sizes = subgroup_counts(dataset, index, Condition.SELECTION_RATE)
    overall = int(np.count_nonzero(dataset.predictions)) / n
    keys, results = [], []
    for key, positive, size in zip(index.keys, accepted.tolist(), sizes.tolist()):
        rate = positive / size
        keys.append(key)
        results.append(MetricResult(
            subject=key.label,
            value=(size / n) * abs(overall - rate) - epsilon,
            epsilon=epsilon,
            supports={'n': size, 'accepted': positive},
            details={'rate': rate},
        ))
    return _combine('spsf', keys, results, operator, epsilon, [], {'overall_rate': overall})


def fpsf(
        dataset: Dataset,
        index: SubgroupIndex,
        epsilon: float = 0.0,
        operator: CombineOperator = CombineOperator.MAX,
) -> SubgroupMetricSet:
    """Subgroup deviation from the population false-positive rate, weighted by P(y=-, sg)."""
    epsilon = check_epsilon(epsilon)
    if dataset.labels is None or dataset.missing_labels:
        raise LabelsRequired('fpsf')
    n = dataset.n
    if n == 0:
        return _combine('fpsf', [], [], operator, epsilon, [], {})
    false_positives, negatives = subgroup_counts(dataset, index, Condition.FALSE_POSITIVE_RATE)
    total_negatives = int(negatives.sum())
    overall = int(false_positives.sum()) / total_negatives if total_negatives else None
    keys, results = [], []
    for key, fp, negative in zip(index.keys, false_positives.tolist(), negatives.tolist()):
        keys.append(key)
        if negative == 0:
            results.append(MetricResult(
                subject=key.label,
                value=-epsilon,
                epsilon=epsilon,
                supports={'negatives': 0, 'false_positives': 0},
                flags=(NO_NEGATIVE_SUPPORT,),
            ))
            continue
        rate = fp / negative
        results.append(MetricResult(
            subject=key.label,
            value=(negative / n) * abs(overall - rate) - epsilon,
            epsilon=epsilon,
            supports={'negatives': negative, 'false_positives': fp},
            details={'rate': rate},
        ))
    return _combine('fpsf', keys, results, operator, epsilon, [], {'overall_rate': overall})


def pair_value(first: float, second: float, epsilon: float) -> tuple[float, bool]:
    """Rate ratio (larger over smaller) minus e^epsilon, and whether it hit a zero rate."""
    high, low = max(first, second), min(first, second)
    if low == 0:
        if high == 0:
            return 1 - math.exp(epsilon), False
        return math.inf, True
    return high / low - math.exp(epsilon), False


def differential_fairness(
        dataset: Dataset,
        index: SubgroupIndex,
        policy: PairEpsilonPolicy | None = None,
        positive_class: bool = True,
        alpha: float = 0.0,
        min_support: int = 0,
) -> SubgroupMetricSet:
    """
    Pairwise outcome-rate ratios between included subgroups. A zero rate facing a
    positive one gives the +inf sentinel instead of a clamped number.
    """
    policy = policy or PairEpsilonPolicy()
    alpha = check_alpha(alpha)
    accepted, sizes = subgroup_counts(dataset, index, Condition.SELECTION_RATE)
    included: list[tuple[SubgroupKey, float, int]] = []
    excluded: list[Exclusion] = []
    for key, positive, size in zip(index.keys, accepted.tolist(), sizes.tolist()):
        if size < min_support:
            excluded.append(Exclusion(key, BELOW_MIN_SUPPORT))
            continue
        favorable = positive if positive_class else size - positive
        rate = GroupRate(favorable, size, alpha)
        if not rate.defined:
            excluded.append(Exclusion(key, UNDEFINED_RATE))
            continue
        included.append((key, rate.value, size))
    if excluded:
        logger.info(f"Differential fairness excluded {len(excluded)} subgroup(s)")

    pairs: list[PairResult] = []
    empirical = 0.0
    for i, (first, first_rate, first_size) in enumerate(included):
        for second, second_rate, second_size in included[i + 1:]:
            epsilon = policy.epsilon_for(first, second)
            value, zero = pair_value(first_rate, second_rate, epsilon)
            high, low = max(first_rate, second_rate), min(first_rate, second_rate)
            empirical = max(empirical, math.inf if zero else (math.log(high / low) if low > 0 else 0.0))
            pairs.append(PairResult(first, second, MetricResult(
                subject=f"{first.label}|{second.label}",
                value=value,
                epsilon=epsilon,
                supports={first.label: first_size, second.label: second_size},
                flags=(ZERO_RATE,) if zero else (),
                details={'rates': [first_rate, second_rate]},
            )))

    rate_of = {key: rate for key, rate, _ in included}
    order = {key: i for i, (key, _, _) in enumerate(included)}
    if pairs:
        worst = max(pairs, key=lambda p: p.result.value)
        value = worst.result.value
        epsilon = worst.result.epsilon
        arg_min = min((worst.first, worst.second), key=lambda k: (rate_of[k], order[k]))
        arg_max = worst.second if arg_min == worst.first else worst.first
    else:
        value = 1 - math.exp(policy.default)
        epsilon = policy.default
        arg_min = arg_max = None
    combined = None
    if included:
        combined = MetricResult(
            subject='df[max]',
            value=value,
            epsilon=epsilon,
            supports={'subgroups': len(included), 'pairs': len(pairs)},
            flags=(ZERO_RATE,) if any(p.result.flags for p in pairs) else (),
            details={'empirical_epsilon': empirical, 'class': '+' if positive_class else '-'},
        )
    return SubgroupMetricSet(
        metric='df',
        subgroups=tuple(k for k, _, _ in included),
        pairs=tuple(pairs),
        combined=combined,
        excluded=tuple(excluded),
        arg_min=arg_min,
        arg_max=arg_max,
        details={'empirical_epsilon': empirical, 'alpha': alpha, 'min_support': min_support},
    )


def worst_case_fairness(
        dataset: Dataset,
        index: SubgroupIndex,
        condition: Condition = Condition.SELECTION_RATE,
        min_support: int = 0,
        alpha: float = 0.0,
) -> SubgroupMetricSet:
    """One minus the ratio between the worst and the best subgroup rate."""
    alpha = check_alpha(alpha)
    numerators, denominators = subgroup_counts(dataset, index, condition)
    sizes = index.counts.tolist()
    rates: dict[SubgroupKey, float] = {}
    excluded: list[Exclusion] = []
    for key, num, den, size in zip(index.keys, numerators.tolist(), denominators.tolist(), sizes):
        if size < min_support:
            excluded.append(Exclusion(key, BELOW_MIN_SUPPORT))
            continue
        rate = GroupRate(num, den, alpha)
        if not rate.defined:
            excluded.append(Exclusion(key, UNDEFINED_RATE))
            continue
        rates[key] = rate.value
    if not rates:
        raise NoEligibleSubgroup('wcf')

    arg_min = arg_max = None
    for key, rate in rates.items():
        if arg_min is None or rate < rates[arg_min]:
            arg_min = key
        if arg_max is None or rate > rates[arg_max]:
            arg_max = key
    low, high = rates[arg_min], rates[arg_max]
    value = 0.0 if high == 0 else 1 - low / high
    combined = MetricResult(
        subject='wcf',
        value=value,
        epsilon=0.0,
        supports={'subgroups': len(rates), 'excluded': len(excluded)},
        details={'condition': str(condition), 'min_rate': low, 'max_rate': high},
    )
    return SubgroupMetricSet(
        metric='wcf',
        subgroups=tuple(rates),
        combined=combined,
        excluded=tuple(excluded),
        arg_min=arg_min,
        arg_max=arg_max,
        details={'rates': {k.label: r for k, r in rates.items()}},
    )
