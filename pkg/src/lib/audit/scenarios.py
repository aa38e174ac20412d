import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .dataset import AttributeSchema, Dataset, OutcomeColumn, ProtectedAttribute, Record
from .sequential import ACCEPTED, NOT_REACHED, REJECTED, PipelineSchema, PipelineTrace, StageSpec

logger = logging.getLogger(__name__)

Rate = float
RateRange = tuple[float, float]

HIRING_STAGES = ('cv_review', 'assessment', 'interview')


class ScenarioSpec(BaseModel):
    kind: Literal['gerrymandering', 'hiring-pipeline', 'random', 'random-trace']
    # random datasets and traces
    n: int = Field(default=64, ge=0)
    k: int = Field(default=3, ge=1)
    seed: int = 0
    label_rate: RateRange = (0.2, 0.8)
    selection_rate: RateRange = (0.1, 0.9)
    agreement: Rate = Field(default=0.5, ge=0, le=1)
    stages: int = Field(default=3, ge=1)
    # gerrymandering
    ground_truth: Literal['none', 'predictions'] = 'none'
    # hiring pipeline
    per_group: int = Field(default=100, ge=1)
    stage1_rates: dict[str, Rate] = {'Male': 0.8, 'Female': 0.5}
    stage2_rate: Rate = Field(default=0.5, ge=0, le=1)
    stage3_rates: dict[str, Rate] = {'Male': 0.4, 'Female': 0.4}

    @model_validator(mode='after')
    def _rates_in_unit_interval(self):
        ranges = [self.label_rate, self.selection_rate]
        for low, high in ranges:
            if not 0 <= low <= high <= 1:
                raise ValueError(f"rate range ({low}, {high}) must satisfy 0 <= low <= high <= 1")
        for rates in (self.stage1_rates, self.stage3_rates):
            if any(not 0 <= r <= 1 for r in rates.values()):
                raise ValueError("stage rates must lie in [0, 1]")
        return self


GERRYMANDERING_SCHEMA = AttributeSchema(
    attributes=(
        ProtectedAttribute(name='race', domain=('White', 'Black'), protected_value='Black'),
        ProtectedAttribute(name='gender', domain=('Male', 'Female'), protected_value='Female'),
    ),
    prediction_column=OutcomeColumn(name='suspect', positive='yes', negative='no'),
)

# (race, gender, size, predicted positive)
GERRYMANDERING_CELLS = (
    ('White', 'Male', 20, 0),
    ('White', 'Female', 20, 20),
    ('Black', 'Male', 40, 30),
    ('Black', 'Female', 20, 0),
)


def gen_gerrymandering(ground_truth: Literal['none', 'predictions'] = 'none') -> Dataset:
    """
    100 suspects where gender and race are each balanced at 50% acceptance while
    white women are all flagged and white men none.
    """
    schema = GERRYMANDERING_SCHEMA
    if ground_truth == 'predictions':
        schema = schema.model_copy(
            update={'label_column': OutcomeColumn(name='trafficker', positive='yes', negative='no')}
        )
    records = []
    for race, gender, size, positives in GERRYMANDERING_CELLS:
        for i in range(size):
            flagged = i < positives
            records.append(Record(
                index=len(records),
                attribute_values=(race, gender),
                prediction=flagged,
                label=flagged if ground_truth == 'predictions' else None,
            ))
    return Dataset.from_records(schema, records)


def _accepted_count(rate: float, survivors: int, stage: str, group: str) -> int:
    exact = rate * survivors
    count = round(exact)
    if abs(exact - count) > 1e-9:
        logger.warning(f"Stage '{stage}' rate {rate} for {group} is not exact over {survivors} survivors; using {count}")
    return count


def gen_hiring_pipeline(
        per_group: int = 100,
        stage1_rates: dict[str, float] | None = None,
        stage2_rate: float = 0.5,
        stage3_rates: dict[str, float] | None = None,
) -> PipelineTrace:
    """CV review, assessment and interview for male and female applicants."""
    stage1_rates = stage1_rates or {'Male': 0.8, 'Female': 0.5}
    stage3_rates = stage3_rates or {'Male': 0.4, 'Female': 0.4}
    schema = PipelineSchema(
        attributes=(ProtectedAttribute(name='gender', domain=('Male', 'Female'), protected_value='Female'),),
        stages=tuple(StageSpec(name=name) for name in HIRING_STAGES),
        id_column='applicant',
    )
    ids, codes, outcomes = [], [], []
    for code, group in enumerate(schema.attributes[0].domain):
        rates = (stage1_rates[group], stage2_rate, stage3_rates[group])
        rows = np.full((per_group, len(HIRING_STAGES)), NOT_REACHED, dtype=np.int8)
        survivors = per_group
        for t, (stage, rate) in enumerate(zip(HIRING_STAGES, rates)):
            accepted = _accepted_count(rate, survivors, stage, group)
            rows[:accepted, t] = ACCEPTED
            rows[accepted:survivors, t] = REJECTED
            survivors = accepted
        ids.extend(f"{group[0]}{i + 1:03d}" for i in range(per_group))
        codes.extend([code] * per_group)
        outcomes.append(rows)
    return PipelineTrace(schema=schema, ids=tuple(ids), codes=np.array(codes), outcomes=np.vstack(outcomes))


def random_schema(k: int, with_labels: bool = True) -> AttributeSchema:
    return AttributeSchema(
        attributes=tuple(
            ProtectedAttribute(name=f"s{j + 1}", domain=('in', 'out'), protected_value='in') for j in range(k)
        ),
        label_column=OutcomeColumn(name='y', positive='1', negative='0') if with_labels else None,
        prediction_column=OutcomeColumn(name='y_hat', positive='1', negative='0'),
    )


def _cell_rates(rng: np.random.Generator, codes: np.ndarray, bounds: RateRange) -> np.ndarray:
    """One rate per occupied cell, broadcast to the records."""
    _, inverse = np.unique(codes, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    rates = rng.uniform(bounds[0], bounds[1], size=int(inverse.max()) + 1)
    return rates[inverse]


def gen_random(
        n: int,
        k: int,
        seed: int,
        label_rate: RateRange = (0.2, 0.8),
        selection_rate: RateRange = (0.1, 0.9),
        agreement: float = 0.5,
) -> Dataset:
    """
    Binary attributes drawn uniformly; labels and predictions drawn with rates
    sampled per occupied subgroup. A prediction copies the label with probability
    `agreement`, otherwise it follows the subgroup selection rate.
    """
    schema = random_schema(k)
    if n == 0:
        return Dataset(schema=schema, codes=np.zeros((0, k)), predictions=np.zeros(0, dtype=bool), labels=np.zeros(0))
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 2, size=(n, k))
    labels = rng.random(n) < _cell_rates(rng, codes, label_rate)
    selected = rng.random(n) < _cell_rates(rng, codes, selection_rate)
    keep = rng.random(n) < agreement
    predictions = np.where(keep, labels, selected)
    return Dataset(schema=schema, codes=codes, predictions=predictions, labels=labels.astype(np.int8))


def gen_random_trace(
        n: int,
        k: int,
        seed: int,
        stages: int = 3,
        selection_rate: RateRange = (0.3, 0.9),
) -> PipelineTrace:
    """Funnel trace with a random acceptance rate per occupied subgroup and stage."""
    schema = PipelineSchema(
        attributes=random_schema(k).attributes,
        stages=tuple(StageSpec(name=f"stage{t + 1}") for t in range(stages)),
    )
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 2, size=(n, k))
    outcomes = np.full((n, stages), NOT_REACHED, dtype=np.int8)
    alive = np.ones(n, dtype=bool)
    for t in range(stages):
        accept = rng.random(n) < _cell_rates(rng, codes, selection_rate) if n else np.zeros(0, dtype=bool)
        outcomes[alive & accept, t] = ACCEPTED
        outcomes[alive & ~accept, t] = REJECTED
        alive &= accept
    return PipelineTrace(schema=schema, ids=tuple(str(i + 1) for i in range(n)), codes=codes, outcomes=outcomes)


def generate(spec: ScenarioSpec) -> Dataset | PipelineTrace:
    if spec.kind == 'gerrymandering':
        return gen_gerrymandering(spec.ground_truth)
    if spec.kind == 'hiring-pipeline':
        return gen_hiring_pipeline(spec.per_group, spec.stage1_rates, spec.stage2_rate, spec.stage3_rates)
    if spec.kind == 'random-trace':
        return gen_random_trace(spec.n, spec.k, spec.seed, spec.stages, spec.selection_rate)
    return gen_random(spec.n, spec.k, spec.seed, spec.label_rate, spec.selection_rate, spec.agreement)
