import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .cumulative import CombineOperator
from .dataset import (
    FIRST_DATA_LINE,
    AttributeSchema,
    Dataset,
    LoadOptions,
    OutcomeColumn,
    ProtectedAttribute,
    SubgroupKey,
    drop_missing,
    encode_attributes,
    enumerate_subgroups,
    read_frame,
)
from .errors import DegeneratePenalty, InvalidSchema, UndefinedRate, UnparsableRow, ZeroRate
from .metrics import Condition, MetricResult, complement_name, estimate_rate

logger = logging.getLogger(__name__)

ACCEPTED = 1
REJECTED = 0
NOT_REACHED = -1


class StageSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    column: str | None = None
    truth_column: str | None = None

    @property
    def outcome_column(self) -> str:
        return self.column or self.name


class PipelineSchema(BaseModel):
    """Attribute columns plus one outcome column per stage, stages in decision order."""
    model_config = ConfigDict(frozen=True)

    attributes: tuple[ProtectedAttribute, ...] = Field(min_length=1)
    stages: tuple[StageSpec, ...] = Field(min_length=1)
    id_column: str | None = None
    accepted: tuple[str, ...] = ('+',)
    rejected: tuple[str, ...] = ('-', '−')

    @model_validator(mode='after')
    def _distinct_columns(self):
        columns = [a.name for a in self.attributes] + [s.outcome_column for s in self.stages]
        columns += [s.truth_column for s in self.stages if s.truth_column]
        if self.id_column:
            columns.append(self.id_column)
        if len(set(columns)) != len(columns):
            raise ValueError("pipeline columns must be distinct")
        if len({s.name for s in self.stages}) != len(self.stages):
            raise ValueError("stage names must be unique")
        return self

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidSchema(f"unknown protected attribute '{name}'") from None


def load_pipeline_schema(path: Path | str) -> PipelineSchema:
    try:
        return PipelineSchema.model_validate_json(Path(path).read_text(encoding='utf-8'))
    except ValidationError as e:
        raise InvalidSchema(f"{path}: {e}") from e


@dataclass(frozen=True, eq=False)
class PipelineTrace:
    """
    One row per individual, one column per stage. Outcomes are 1 (accepted),
    0 (rejected) or -1 (not reached); truths use -1 for unknown.
    """
    schema: PipelineSchema
    ids: tuple[str, ...]
    codes: np.ndarray
    outcomes: np.ndarray
    truths: np.ndarray | None = None

    def __post_init__(self):
        n, stages = len(self.ids), len(self.schema.stages)
        codes = np.array(self.codes, dtype=np.int32, copy=True).reshape(n, len(self.schema.attributes))
        outcomes = np.array(self.outcomes, dtype=np.int8, copy=True).reshape(n, stages)
        codes.setflags(write=False)
        outcomes.setflags(write=False)
        object.__setattr__(self, 'codes', codes)
        object.__setattr__(self, 'outcomes', outcomes)
        if self.truths is not None:
            truths = np.array(self.truths, dtype=np.int8, copy=True).reshape(n, stages)
            truths.setflags(write=False)
            object.__setattr__(self, 'truths', truths)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def stage_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.schema.stages)

    @property
    def T(self) -> int:
        return len(self.schema.stages)

    def stage_dataset(self, stage: int) -> Dataset:
        """Everyone in the trace, with the stage outcome as prediction; filter with `reached`."""
        spec = self.schema.stages[stage]
        labels = None
        label_column = None
        if self.truths is not None and spec.truth_column:
            labels = self.truths[:, stage]
            label_column = OutcomeColumn(name=spec.truth_column, positive=self.schema.accepted)
        schema = AttributeSchema(
            attributes=self.schema.attributes,
            prediction_column=OutcomeColumn(name=spec.outcome_column, positive=self.schema.accepted),
            label_column=label_column,
        )
        return Dataset(schema=schema, codes=self.codes, predictions=self.outcomes[:, stage] == ACCEPTED, labels=labels)

    def reached(self, stage: int) -> np.ndarray:
        return self.outcomes[:, stage] != NOT_REACHED

    @cached_property
    def population(self) -> Dataset:
        """Individuals with the final-stage acceptance as prediction, for subgroup enumeration."""
        return self.stage_dataset(self.T - 1)


@dataclass(frozen=True)
class PipelineViolation:
    individual: str
    stage: str
    reason: str

    def to_dict(self) -> dict:
        return {'individual': self.individual, 'stage': self.stage, 'reason': self.reason}


@dataclass(frozen=True)
class PipelineValidation:
    violations: tuple[PipelineViolation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_pipeline(trace: PipelineTrace) -> PipelineValidation:
    """Lists every break of funnel semantics: a stage is reached exactly until the first rejection."""
    violations = []
    names = trace.stage_names
    for row, outcomes in enumerate(trace.outcomes.tolist()):
        rejected_at = None
        for t, outcome in enumerate(outcomes):
            if rejected_at is None:
                if outcome == NOT_REACHED:
                    reason = 'not reached before any rejection'
                    violations.append(PipelineViolation(trace.ids[row], names[t], reason))
                    rejected_at = t
                elif outcome == REJECTED:
                    rejected_at = t
            elif outcome == ACCEPTED:
                reason = f"accepted after rejection at '{names[rejected_at]}'"
                violations.append(PipelineViolation(trace.ids[row], names[t], reason))
            elif outcome == REJECTED:
                reason = f"reached after rejection at '{names[rejected_at]}'"
                violations.append(PipelineViolation(trace.ids[row], names[t], reason))
    if violations:
        logger.warning(f"Pipeline trace has {len(violations)} violation(s)")
    return PipelineValidation(tuple(violations))


def _encode_stage(values: pd.Series, schema: PipelineSchema, stage: str, lines: np.ndarray) -> np.ndarray:
    accepted = values.isin(schema.accepted).to_numpy()
    rejected = values.isin(schema.rejected).to_numpy()
    blank = (values == '').to_numpy()
    outside = ~(accepted | rejected | blank)
    if outside.any():
        position = int(np.flatnonzero(outside)[0])
        raise UnparsableRow(int(lines[position]), f"stage '{stage}' has outcome '{values.iloc[position]}'")
    out = np.full(len(values), NOT_REACHED, dtype=np.int8)
    out[accepted] = ACCEPTED
    out[rejected] = REJECTED
    return out


def load_pipeline_csv(path: Path | str, schema: PipelineSchema, options: LoadOptions | None = None) -> PipelineTrace:
    options = options or LoadOptions()
    columns = list(schema.names) + [s.outcome_column for s in schema.stages]
    columns += [s.truth_column for s in schema.stages if s.truth_column]
    if schema.id_column:
        columns.append(schema.id_column)
    frame = read_frame(path, columns, options)
    frame, dropped = drop_missing(frame, list(schema.names), options)
    lines = frame.index.to_numpy() + FIRST_DATA_LINE
    attributes, codes = encode_attributes(frame, schema.attributes, lines)
    outcomes = np.column_stack(
        [_encode_stage(frame[s.outcome_column], schema, s.name, lines) for s in schema.stages]
    ) if len(frame) else np.zeros((0, len(schema.stages)), dtype=np.int8)
    truths = None
    if any(s.truth_column for s in schema.stages):
        truths = np.full((len(frame), len(schema.stages)), NOT_REACHED, dtype=np.int8)
        for t, spec in enumerate(schema.stages):
            if spec.truth_column:
                truths[:, t] = _encode_stage(frame[spec.truth_column], schema, spec.name, lines)
    if schema.id_column:
        ids = tuple(frame[schema.id_column].tolist())
    else:
        ids = tuple(str(line) for line in lines.tolist())
    logger.info(f"Loaded pipeline trace with {len(ids)} individual(s), {len(schema.stages)} stage(s), {dropped} dropped")
    return PipelineTrace(
        schema=schema.model_copy(update={'attributes': attributes}),
        ids=ids,
        codes=codes,
        outcomes=outcomes,
        truths=truths,
    )


def write_pipeline_csv(trace: PipelineTrace, path: Path | str) -> Path:
    schema = trace.schema
    tokens = np.array([schema.rejected[0], schema.accepted[0], ''], dtype=object)
    columns: dict[str, Any] = {}
    if schema.id_column:
        columns[schema.id_column] = list(trace.ids)
    for j, attribute in enumerate(schema.attributes):
        columns[attribute.name] = np.asarray(attribute.domain, dtype=object)[trace.codes[:, j]]
    for t, spec in enumerate(schema.stages):
        columns[spec.outcome_column] = tokens[np.where(trace.outcomes[:, t] < 0, 2, trace.outcomes[:, t])]
        if spec.truth_column and trace.truths is not None:
            columns[spec.truth_column] = tokens[np.where(trace.truths[:, t] < 0, 2, trace.truths[:, t])]
    path = Path(path)
    pd.DataFrame(columns).to_csv(path, index=False)
    return path


def penalty_product(values: Sequence[float]) -> float:
    """Product of 1/(1+F) over the given F values."""
    product = 1.0
    for t, value in enumerate(values):
        if value == -1:
            raise DegeneratePenalty(t)
        product *= 1 / (1 + value)
    return product


def unroll(ratios: Sequence[float], f0: float) -> list[float]:
    """[F(0), F(1), ..., F(T)] from the per-stage reference:target rate ratios."""
    values = [f0]
    penalty = 1.0
    for ratio in ratios:
        last = values[-1]
        if last == -1:
            raise DegeneratePenalty(len(values) - 1)
        penalty *= 1 / (1 + last)
        values.append(ratio - penalty)
    return values


@dataclass(frozen=True)
class StageResult:
    stage: str
    index: int
    reference_rate: float
    target_rate: float
    ratio: float
    penalty: float
    value: float
    supports: Mapping[str, int] = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return self.value > 0

    def to_dict(self) -> dict:
        return {
            'stage': self.stage,
            'index': self.index,
            'reference_rate': self.reference_rate,
            'target_rate': self.target_rate,
            'ratio': self.ratio,
            'penalty': self.penalty,
            'value': self.value,
            'violated': self.violated,
            'supports': dict(self.supports),
        }


@dataclass(frozen=True)
class SequentialResult:
    subject: str
    target: str
    reference: str
    condition: Condition
    f0: float
    stages: tuple[StageResult, ...]
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def values(self) -> list[float]:
        return [self.f0] + [s.value for s in self.stages]

    @property
    def ratios(self) -> list[float]:
        return [s.ratio for s in self.stages]

    @property
    def violated(self) -> bool:
        return any(s.violated for s in self.stages)

    def recompute(self) -> list[float]:
        return unroll(self.ratios, self.f0)

    def to_dict(self) -> dict:
        out = {
            'subject': self.subject,
            'target': self.target,
            'reference': self.reference,
            'condition': str(self.condition),
            'f0': self.f0,
            'values': self.values,
            'stages': [s.to_dict() for s in self.stages],
        }
        if self.details:
            out['details'] = dict(self.details)
        return out


def _sequence(
        trace: PipelineTrace,
        target_mask: np.ndarray,
        reference_mask: np.ndarray,
        target: str,
        reference: str,
        condition: Condition,
        f0: float,
        stages: int | None = None,
) -> list[StageResult]:
    stages = trace.T if stages is None else stages
    results = []
    values = [f0]
    penalty = 1.0
    for t in range(stages):
        name = trace.stage_names[t]
        data = trace.stage_dataset(t)
        reached = trace.reached(t)
        target_rate = estimate_rate(data, condition, rows=np.flatnonzero(reached & target_mask))
        reference_rate = estimate_rate(data, condition, rows=np.flatnonzero(reached & reference_mask))
        if not target_rate.defined:
            raise UndefinedRate(target, name)
        if not reference_rate.defined:
            raise UndefinedRate(reference, name)
        if target_rate.value == 0:
            raise ZeroRate(target, name)
        if values[-1] == -1:
            raise DegeneratePenalty(t)
        penalty *= 1 / (1 + values[-1])
        ratio = reference_rate.value / target_rate.value
        value = ratio - penalty
        values.append(value)
        results.append(StageResult(
            stage=name,
            index=t + 1,
            reference_rate=reference_rate.value,
            target_rate=target_rate.value,
            ratio=ratio,
            penalty=penalty,
            value=value,
            supports={
                'reference_reached': reference_rate.denominator,
                'reference_favorable': reference_rate.numerator,
                'target_reached': target_rate.denominator,
                'target_favorable': target_rate.numerator,
            },
        ))
    return results


def _group_masks(trace: PipelineTrace, attribute: str) -> tuple[np.ndarray, str, str]:
    j = trace.schema.index_of(attribute)
    spec = trace.schema.attributes[j]
    if spec.protected_value is None:
        raise InvalidSchema(f"attribute '{attribute}' has no protected value")
    in_group = trace.codes[:, j] == spec.protected_index
    return in_group, f"{attribute}={spec.protected_value}", f"{attribute}={complement_name(spec)}"


def sequential_group_fairness(
        trace: PipelineTrace,
        attribute: str,
        condition: Condition = Condition.SELECTION_RATE,
        f0: float = 0.0,
) -> SequentialResult:
    """
    Per-stage rates among the individuals who reached the stage; the non-protected
    group is the numerator of the ratio.
    """
    in_group, target, reference = _group_masks(trace, attribute)
    stages = _sequence(trace, in_group, ~in_group, target, reference, condition, f0)
    return SequentialResult(
        subject=attribute,
        target=target,
        reference=reference,
        condition=condition,
        f0=f0,
        stages=tuple(stages),
    )


def required_terminal_ratio(
        trace: PipelineTrace,
        attribute: str,
        f0: float = 0.0,
        condition: Condition = Condition.SELECTION_RATE,
        through_stage: int | None = None,
) -> float:
    """
    Reference:target rate ratio the terminal stage must reach for its F to be zero.
    Uses stages 1..through_stage (default: every stage but the last).
    """
    through_stage = trace.T - 1 if through_stage is None else through_stage
    if not 0 <= through_stage <= trace.T:
        raise InvalidSchema(f"through_stage must be within 0..{trace.T}")
    in_group, target, reference = _group_masks(trace, attribute)
    stages = _sequence(trace, in_group, ~in_group, target, reference, condition, f0, through_stage)
    return penalty_product([f0] + [s.value for s in stages])


def best_subgroup(trace: PipelineTrace) -> SubgroupKey:
    """Subgroup with the highest end-to-end acceptance; ties go to the first key."""
    index = enumerate_subgroups(trace.population)
    if not index.keys:
        raise UndefinedRate('reference subgroup')
    accepted = np.bincount(
        index.assignment,
        weights=(trace.outcomes[:, -1] == ACCEPTED).astype(float),
        minlength=len(index.keys),
    )
    rates = accepted / index.counts
    return index.keys[int(np.argmax(rates))]


def _subgroup_mask(trace: PipelineTrace, key: SubgroupKey) -> np.ndarray:
    if len(key.assignment) != len(trace.schema.attributes):
        raise InvalidSchema(f"subgroup '{key}' does not assign every attribute")
    mask = np.ones(trace.n, dtype=bool)
    for j, (attribute, value) in enumerate(zip(trace.schema.attributes, key.assignment)):
        if value not in attribute.domain:
            raise InvalidSchema(f"'{value}' is not a group of '{attribute.name}'")
        mask &= trace.codes[:, j] == attribute.domain.index(value)
    return mask


def sequential_subgroup_fairness(
        trace: PipelineTrace,
        target: SubgroupKey,
        reference: SubgroupKey | None = None,
        condition: Condition = Condition.SELECTION_RATE,
        f0: float = 0.0,
) -> SequentialResult:
    auto = reference is None
    if auto:
        reference = best_subgroup(trace)
        logger.info(f"Reference subgroup selected automatically: {reference}")
    stages = _sequence(
        trace,
        _subgroup_mask(trace, target),
        _subgroup_mask(trace, reference),
        target.label,
        reference.label,
        condition,
        f0,
    )
    return SequentialResult(
        subject=target.label,
        target=target.label,
        reference=reference.label,
        condition=condition,
        f0=f0,
        stages=tuple(stages),
        details={'reference_auto': auto},
    )


@dataclass(frozen=True)
class SequentialMultiResult:
    operator: CombineOperator
    stages: tuple[MetricResult, ...]
    breakdown: tuple[SequentialResult, ...]

    @property
    def violated(self) -> bool:
        return any(s.violated for s in self.stages)

    def to_dict(self) -> dict:
        return {
            'operator': str(self.operator),
            'stages': [s.to_dict() for s in self.stages],
            'breakdown': [b.to_dict() for b in self.breakdown],
        }


def sequential_multi(
        trace: PipelineTrace,
        attributes: Sequence[str],
        condition: Condition = Condition.SELECTION_RATE,
        operator: CombineOperator = CombineOperator.MAX,
        f0: float | Mapping[str, float] = 0.0,
) -> SequentialMultiResult:
    if not attributes:
        raise InvalidSchema("sequential_multi needs at least one attribute")
    ordered = sorted(set(attributes), key=trace.schema.index_of)
    seeds = f0 if isinstance(f0, Mapping) else {name: f0 for name in ordered}
    breakdown = tuple(
        sequential_group_fairness(trace, name, condition, float(seeds.get(name, 0.0))) for name in ordered
    )
    stages = []
    for t, name in enumerate(trace.stage_names):
        values = {b.subject: b.stages[t].value for b in breakdown}
        stages.append(MetricResult(
            subject=name,
            value=operator.apply(list(values.values())),
            supports={'attributes': len(breakdown)},
            details={'values': values},
        ))
    return SequentialMultiResult(operator=operator, stages=tuple(stages), breakdown=breakdown)



@dataclass(frozen=True)
class SequentialBreakdown:
    results: tuple[SequentialResult, ...]

    @property
    def violated(self) -> bool:
        return any(r.violated for r in self.results)

    def to_dict(self) -> dict:
        return {'attributes': [r.to_dict() for r in self.results]}
