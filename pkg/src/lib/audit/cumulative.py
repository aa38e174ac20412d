import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Sequence

from .dataset import Dataset
from .errors import ConfigError
from .metrics import Condition, MetricResult, check_epsilon, group_discrimination


class CombineOperator(StrEnum):
    MAX = 'max'
    SUM = 'sum'
    MEAN = 'mean'

    def apply(self, values: Sequence[float]) -> float:
        if not values:
            raise ConfigError(f"operator '{self}' needs at least one value")
        if self is CombineOperator.MAX:
            return max(values)
        total = math.fsum(values)
        return total if self is CombineOperator.SUM else total / len(values)


@dataclass(frozen=True)
class CumulativeResult:
    result: MetricResult
    breakdown: tuple[MetricResult, ...]
    operator: CombineOperator
    arg_max: str | None = None

    @property
    def violated(self) -> bool:
        return self.result.violated

    def to_dict(self) -> dict:
        return {
            'operator': str(self.operator),
            'combined': self.result.to_dict(),
            'arg_max': self.arg_max,
            'breakdown': [r.to_dict() for r in self.breakdown],
        }


def cumulative_discrimination(
        dataset: Dataset,
        attributes: Sequence[str],
        condition: Condition = Condition.SELECTION_RATE,
        operator: CombineOperator = CombineOperator.MAX,
        epsilon: float = 0.0,
        alpha: float = 0.0,
) -> CumulativeResult:
    """
    Combines per-attribute group discrimination. Attributes are evaluated in
    schema order so the arg-max tie-break does not depend on the caller.
    """
    epsilon = check_epsilon(epsilon)
    if not attributes:
        raise ConfigError("cumulative discrimination needs at least one attribute")
    ordered = sorted(set(attributes), key=dataset.schema.index_of)
    breakdown = tuple(group_discrimination(dataset, name, condition, epsilon, alpha) for name in ordered)
    values = [r.value for r in breakdown]
    combined = operator.apply(values)
    arg_max = None
    if operator is CombineOperator.MAX:
        arg_max = breakdown[values.index(combined)].subject
    result = MetricResult(
        subject='+'.join(ordered),
        value=combined,
        epsilon=epsilon,
        supports={'attributes': len(breakdown), 'n': dataset.n},
        details={'condition': str(condition), 'operator': str(operator)},
    )
    return CumulativeResult(result=result, breakdown=breakdown, operator=operator, arg_max=arg_max)
