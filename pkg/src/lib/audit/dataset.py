import logging
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Annotated, Iterator, Literal, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from settings import MISSING_TOKENS, MissingPolicy
from .errors import (
    DomainViolation,
    IncompleteRule,
    InvalidSchema,
    MissingColumn,
    MissingLabels,
    MissingValue,
    NonNumericThreshold,
    UnparsableRow,
)

logger = logging.getLogger(__name__)

# header is line 1 of the file
FIRST_DATA_LINE = 2


class CategoricalRule(BaseModel):
    """Maps every domain value to one of exactly two named groups."""
    model_config = ConfigDict(frozen=True)

    kind: Literal['categorical'] = 'categorical'
    groups: dict[str, tuple[str, ...]]
    protected: str

    @model_validator(mode='after')
    def _two_disjoint_groups(self):
        if len(self.groups) != 2:
            raise ValueError(f"categorical rule needs exactly 2 groups, got {len(self.groups)}")
        if self.protected not in self.groups:
            raise ValueError(f"protected group '{self.protected}' is not one of {list(self.groups)}")
        seen: set[str] = set()
        for values in self.groups.values():
            overlap = seen.intersection(values)
            if overlap:
                raise ValueError(f"values {sorted(overlap)} appear in both groups")
            seen.update(values)
        return self

    @property
    def group_names(self) -> tuple[str, str]:
        first, second = self.groups
        return first, second


class ThresholdRule(BaseModel):
    """Numeric split: value < threshold goes to `below`, the rest to `at_or_above`."""
    model_config = ConfigDict(frozen=True)

    kind: Literal['threshold'] = 'threshold'
    threshold: float
    below: str = 'below'
    at_or_above: str = 'at_or_above'
    protected: str | None = None

    @model_validator(mode='after')
    def _protected_is_a_side(self):
        if self.below == self.at_or_above:
            raise ValueError("threshold groups must have distinct names")
        if self.protected is not None and self.protected not in (self.below, self.at_or_above):
            raise ValueError(f"protected group '{self.protected}' is neither '{self.below}' nor '{self.at_or_above}'")
        return self

    @property
    def group_names(self) -> tuple[str, str]:
        return self.below, self.at_or_above

    @property
    def protected_group(self) -> str:
        return self.protected if self.protected is not None else self.below


BinarizationRule = Annotated[CategoricalRule | ThresholdRule, Field(discriminator='kind')]


class ProtectedAttribute(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: Literal['categorical', 'numeric'] = 'categorical'
    domain: tuple[str, ...] = ()
    protected_value: str | None = None
    binarization: BinarizationRule | None = None

    @model_validator(mode='after')
    def _domain_invariants(self):
        if len(set(self.domain)) != len(self.domain):
            raise ValueError(f"attribute '{self.name}' has duplicated domain values")
        if self.kind == 'categorical':
            if len(self.domain) < 2:
                raise ValueError(f"attribute '{self.name}' needs at least 2 domain values")
            if self.protected_value is None:
                raise ValueError(f"attribute '{self.name}' needs a protected_value")
        if self.protected_value is not None and self.domain and self.protected_value not in self.domain:
            raise ValueError(f"protected value '{self.protected_value}' not in domain of '{self.name}'")
        return self

    @property
    def protected_index(self) -> int:
        return self.domain.index(self.protected_value)

    @property
    def is_binary(self) -> bool:
        return len(self.domain) == 2


class OutcomeColumn(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    positive: tuple[str, ...]
    negative: tuple[str, ...] | None = None

    @field_validator('positive', 'negative', mode='before')
    @classmethod
    def _single_value(cls, value):
        if isinstance(value, str):
            return (value,)
        return value

    @property
    def positive_token(self) -> str:
        return self.positive[0]

    @property
    def negative_token(self) -> str:
        if self.negative:
            return self.negative[0]
        return '0' if '0' not in self.positive else '-'


class AttributeSchema(BaseModel):
    model_config = ConfigDict(frozen=True)

    attributes: tuple[ProtectedAttribute, ...] = Field(min_length=1)
    label_column: OutcomeColumn | None = None
    prediction_column: OutcomeColumn

    @model_validator(mode='after')
    def _distinct_columns(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")
        outcome = [c.name for c in (self.label_column, self.prediction_column) if c is not None]
        clash = set(names).intersection(outcome)
        if clash:
            raise ValueError(f"columns {sorted(clash)} used both as attribute and outcome")
        if len(set(outcome)) != len(outcome):
            raise ValueError("label and prediction columns must differ")
        return self

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def columns(self) -> tuple[str, ...]:
        outcome = [c.name for c in (self.label_column, self.prediction_column) if c is not None]
        return self.names + tuple(outcome)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidSchema(f"unknown protected attribute '{name}'") from None

    def attribute(self, name: str) -> ProtectedAttribute:
        return self.attributes[self.index_of(name)]


class LoadOptions(BaseModel):
    delimiter: str = ','
    missing: MissingPolicy = MissingPolicy.DROP
    missing_tokens: tuple[str, ...] = MISSING_TOKENS
    # 'schema' checks attribute, label and prediction columns, 'all' every column in the file
    missing_scope: Literal['schema', 'all'] = 'schema'


def load_schema(path: Path | str) -> AttributeSchema:
    try:
        return AttributeSchema.model_validate_json(Path(path).read_text(encoding='utf-8'))
    except ValidationError as e:
        raise InvalidSchema(f"{path}: {e}") from e


@dataclass(frozen=True)
class Record:
    index: int
    attribute_values: tuple[str, ...]
    prediction: bool
    label: bool | None = None


@dataclass(frozen=True, order=True)
class SubgroupKey:
    """Ordered lexicographically over the attribute values, in schema attribute order."""
    assignment: tuple[str, ...]

    @property
    def label(self) -> str:
        return '-'.join(self.assignment)

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, text: str, names: Sequence[str]) -> 'SubgroupKey':
        """Accepts `race=White,gender=Female` or the dashed label `White-Female`."""
        if '=' in text:
            parts = [part.split('=', 1) for part in text.split(',')]
            if any(len(part) != 2 for part in parts):
                raise InvalidSchema(f"subgroup '{text}' mixes name=value pairs with bare values")
            pairs = {name.strip(): value for name, value in parts}
            missing = [n for n in names if n not in pairs]
            if missing or len(pairs) != len(names):
                raise InvalidSchema(f"subgroup '{text}' must assign exactly {list(names)}")
            return cls(tuple(pairs[n].strip() for n in names))
        parts = text.split('-')
        if len(parts) != len(names):
            raise InvalidSchema(f"subgroup '{text}' does not have {len(names)} parts; use name=value pairs")
        return cls(tuple(p.strip() for p in parts))


def _readonly(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Columnar record store. `codes[i, j]` indexes `schema.attributes[j].domain`;
    labels use 1 / 0 and -1 for an absent label.
    """
    schema: AttributeSchema
    codes: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray | None = None
    dropped_rows: int = 0
    features: pd.DataFrame | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.predictions)
        codes = np.asarray(self.codes).reshape(n, len(self.schema.attributes))
        object.__setattr__(self, 'codes', _readonly(codes, np.int32))
        object.__setattr__(self, 'predictions', _readonly(self.predictions, bool))
        if self.labels is not None:
            if len(self.labels) != n:
                raise InvalidSchema("labels and predictions differ in length")
            object.__setattr__(self, 'labels', _readonly(self.labels, np.int8))
        if self.features is not None and len(self.features) != n:
            raise InvalidSchema("feature table and predictions differ in length")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels)
        )
        return (
            self.schema == other.schema
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.predictions, other.predictions)
            and same_labels
        )

    def __len__(self) -> int:
        return self.n

    @property
    def n(self) -> int:
        return len(self.predictions)

    @property
    def k(self) -> int:
        return len(self.schema.attributes)

    @property
    def missing_labels(self) -> int:
        if self.labels is None:
            return self.n
        return int(np.count_nonzero(self.labels < 0))

    @property
    def has_labels(self) -> bool:
        return self.labels is not None and self.missing_labels == 0

    def values_of(self, row: int) -> tuple[str, ...]:
        return tuple(a.domain[c] for a, c in zip(self.schema.attributes, self.codes[row]))

    def records(self) -> Iterator[Record]:
        for i in range(self.n):
            label = None
            if self.labels is not None and self.labels[i] >= 0:
                label = bool(self.labels[i])
            yield Record(index=i, attribute_values=self.values_of(i), prediction=bool(self.predictions[i]), label=label)

    def subset(self, rows: Sequence[int] | np.ndarray) -> 'Dataset':
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(
            schema=self.schema,
            codes=self.codes[rows],
            predictions=self.predictions[rows],
            labels=None if self.labels is None else self.labels[rows],
            features=None if self.features is None else self.features.iloc[rows].reset_index(drop=True),
        )

    @classmethod
    def from_records(cls, schema: AttributeSchema, records: Sequence[Record]) -> 'Dataset':
        lookup = [{v: i for i, v in enumerate(a.domain)} for a in schema.attributes]
        codes = np.zeros((len(records), len(schema.attributes)), dtype=np.int32)
        for row, record in enumerate(records):
            for j, (attribute, value) in enumerate(zip(schema.attributes, record.attribute_values)):
                if value not in lookup[j]:
                    raise DomainViolation(row + FIRST_DATA_LINE, attribute.name, value)
                codes[row, j] = lookup[j][value]
        labels = None
        if schema.label_column is not None:
            labels = np.array([-1 if r.label is None else int(r.label) for r in records], dtype=np.int8)
        return cls(schema=schema, codes=codes, predictions=np.array([r.prediction for r in records], dtype=bool), labels=labels)


def _first_line(mask: np.ndarray, lines: np.ndarray) -> int:
    return int(lines[np.flatnonzero(mask)[0]])


def _sorted_numeric_domain(attribute: ProtectedAttribute, values: pd.Series, lines: np.ndarray) -> tuple[str, ...]:
    parsed = pd.to_numeric(values, errors='coerce').to_numpy(dtype=float)
    bad = np.isnan(parsed)
    if bad.any():
        line = _first_line(bad, lines)
        raise DomainViolation(line, attribute.name, values.iloc[int(np.flatnonzero(bad)[0])])
    distinct = pd.unique(values)
    return tuple(sorted(distinct, key=lambda v: (float(v), v)))


def encode_attributes(
        frame: pd.DataFrame,
        attributes: Sequence[ProtectedAttribute],
        lines: np.ndarray,
) -> tuple[tuple[ProtectedAttribute, ...], np.ndarray]:
    """
    Turns string columns into domain codes. Numeric attributes without a declared
    domain get one discovered from the data.
    """
    resolved = []
    codes = np.zeros((len(frame), len(attributes)), dtype=np.int32)
    for j, attribute in enumerate(attributes):
        values = frame[attribute.name]
        if attribute.kind == 'numeric' and not attribute.domain:
            domain = _sorted_numeric_domain(attribute, values, lines)
            protected = attribute.protected_value if attribute.protected_value in domain else None
            attribute = attribute.model_copy(update={'domain': domain, 'protected_value': protected})
        column = pd.Categorical(values, categories=list(attribute.domain)).codes
        outside = column < 0
        if outside.any():
            position = int(np.flatnonzero(outside)[0])
            raise DomainViolation(int(lines[position]), attribute.name, values.iloc[position])
        codes[:, j] = column
        resolved.append(attribute)
    return tuple(resolved), codes


def encode_outcome(values: pd.Series, column: OutcomeColumn, lines: np.ndarray) -> np.ndarray:
    """1 for a positive value, 0 otherwise. Missing tokens are handled by the caller."""
    positive = values.isin(column.positive).to_numpy()
    if column.negative is not None:
        negative = values.isin(column.negative).to_numpy()
        outside = ~(positive | negative)
        if outside.any():
            position = int(np.flatnonzero(outside)[0])
            raise DomainViolation(int(lines[position]), column.name, values.iloc[position])
    return positive.astype(np.int8)


_PARSER_LINE = re.compile(r'line (\d+)')


def read_frame(path: Path | str, columns: Sequence[str], options: LoadOptions) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path,
            sep=options.delimiter,
            dtype=str,
            keep_default_na=False,
            encoding='utf-8',
        )
    except pd.errors.EmptyDataError:
        raise MissingColumn(columns[0]) from None
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        raise UnparsableRow(int(match.group(1)) if match else None, str(e).strip()) from e
    except UnicodeDecodeError as e:
        raise UnparsableRow(None, f"not valid UTF-8 at byte {e.start}") from e
    frame.columns = [str(c).strip() for c in frame.columns]
    for column in columns:
        if column not in frame.columns:
            raise MissingColumn(column)
    return frame.apply(lambda c: c.str.strip()) if len(frame) else frame


def drop_missing(frame: pd.DataFrame, checked: Sequence[str], options: LoadOptions) -> tuple[pd.DataFrame, int]:
    if not len(frame) or not checked:
        return frame, 0
    missing = frame[list(checked)].isin(options.missing_tokens)
    rows = missing.any(axis=1).to_numpy()
    if not rows.any():
        return frame, 0
    if options.missing == MissingPolicy.ERROR:
        position = int(np.flatnonzero(rows)[0])
        column = missing.columns[missing.iloc[position].to_numpy()][0]
        raise MissingValue(position + FIRST_DATA_LINE, column)
    dropped = int(rows.sum())
    logger.info(f"Dropped {dropped} row(s) with missing values")
    return frame.loc[~rows], dropped


def load_csv(path: Path | str, schema: AttributeSchema, options: LoadOptions | None = None) -> Dataset:
    options = options or LoadOptions()
    frame = read_frame(path, schema.columns, options)
    label = schema.label_column
    checked = list(frame.columns) if options.missing_scope == 'all' else list(schema.columns)
    frame, dropped = drop_missing(frame, checked, options)

    lines = frame.index.to_numpy() + FIRST_DATA_LINE
    attributes, codes = encode_attributes(frame, schema.attributes, lines)
    resolved = schema.model_copy(update={'attributes': attributes})
    predictions = encode_outcome(frame[schema.prediction_column.name], schema.prediction_column, lines)
    labels = None
    if label is not None:
        labels = encode_outcome(frame[label.name], label, lines)

    features = frame.drop(columns=list(schema.columns)).reset_index(drop=True)
    logger.info(f"Loaded {len(frame)} record(s) from {Path(path).name} ({dropped} dropped)")
    return Dataset(
        schema=resolved,
        codes=codes,
        predictions=predictions.astype(bool),
        labels=labels,
        dropped_rows=dropped,
        features=features if len(features.columns) else None,
    )


def write_csv(dataset: Dataset, path: Path | str, delimiter: str = ',') -> Path:
    schema = dataset.schema
    columns = {}
    for j, attribute in enumerate(schema.attributes):
        columns[attribute.name] = np.asarray(attribute.domain, dtype=object)[dataset.codes[:, j]]
    if schema.label_column is not None and dataset.labels is not None:
        tokens = np.array([schema.label_column.negative_token, schema.label_column.positive_token, ''], dtype=object)
        columns[schema.label_column.name] = tokens[np.where(dataset.labels < 0, 2, dataset.labels)]
    prediction = schema.prediction_column
    columns[prediction.name] = np.where(dataset.predictions, prediction.positive_token, prediction.negative_token)
    frame = pd.DataFrame(columns)
    if dataset.features is not None:
        frame = pd.concat([frame, dataset.features.reset_index(drop=True)], axis=1)
    path = Path(path)
    frame.to_csv(path, sep=delimiter, index=False)
    return path


def _binarize_lookup(attribute: ProtectedAttribute, rule) -> np.ndarray:
    names = rule.group_names
    lookup = np.zeros(len(attribute.domain), dtype=np.int32)
    if isinstance(rule, CategoricalRule):
        owner = {value: names.index(group) for group, values in rule.groups.items() for value in values}
        for i, value in enumerate(attribute.domain):
            if value not in owner:
                raise IncompleteRule(attribute.name, value)
            lookup[i] = owner[value]
        return lookup
    for i, value in enumerate(attribute.domain):
        try:
            number = float(value)
        except ValueError:
            raise NonNumericThreshold(attribute.name, value) from None
        if math.isnan(number):
            raise NonNumericThreshold(attribute.name, value)
        lookup[i] = 0 if number < rule.threshold else 1
    return lookup


def binarize(dataset: Dataset, rules: Mapping[str, BinarizationRule] | None = None) -> Dataset:
    """
    Returns a new dataset where every ruled attribute has exactly two groups.
    Without explicit rules, the rules declared in the schema are applied.
    """
    schema = dataset.schema
    if rules is None:
        rules = {a.name: a.binarization for a in schema.attributes if a.binarization is not None}
    for name in rules:
        schema.index_of(name)
    if not rules:
        return dataset

    codes = np.array(dataset.codes, copy=True)
    attributes = list(schema.attributes)
    for j, attribute in enumerate(schema.attributes):
        rule = rules.get(attribute.name)
        if rule is None:
            continue
        lookup = _binarize_lookup(attribute, rule)
        codes[:, j] = lookup[codes[:, j]]
        protected = rule.protected if isinstance(rule, CategoricalRule) else rule.protected_group
        attributes[j] = ProtectedAttribute(
            name=attribute.name,
            domain=rule.group_names,
            protected_value=protected,
        )
    return Dataset(
        schema=schema.model_copy(update={'attributes': tuple(attributes)}),
        codes=codes,
        predictions=dataset.predictions,
        labels=dataset.labels,
        dropped_rows=dataset.dropped_rows,
        features=dataset.features,
    )


@dataclass(frozen=True, eq=False)
class SubgroupIndex:
    """
    Occupied subgroups only. `assignment[i]` is the position in `keys` of the
    subgroup holding record i.
    """
    attributes: tuple[str, ...]
    keys: tuple[SubgroupKey, ...]
    assignment: np.ndarray
    n: int
    lattice_size: int

    @cached_property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=len(self.keys))

    @cached_property
    def groups(self) -> dict[SubgroupKey, np.ndarray]:
        order = np.argsort(self.assignment, kind='stable')
        bounds = np.cumsum(self.counts)[:-1]
        return dict(zip(self.keys, np.split(order, bounds))) if self.keys else {}

    @cached_property
    def _positions(self) -> dict[SubgroupKey, int]:
        return {key: i for i, key in enumerate(self.keys)}

    @property
    def occupied(self) -> int:
        return len(self.keys)

    @property
    def empty(self) -> int:
        return self.lattice_size - self.occupied

    def position(self, key: SubgroupKey) -> int:
        try:
            return self._positions[key]
        except KeyError:
            raise InvalidSchema(f"subgroup '{key}' is not occupied") from None

    def size(self, key: SubgroupKey) -> int:
        return int(self.counts[self.position(key)])

    def __getitem__(self, key: SubgroupKey) -> np.ndarray:
        self.position(key)
        return self.groups[key]

    def __iter__(self) -> Iterator[SubgroupKey]:
        return iter(self.keys)

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key) -> bool:
        return key in self._positions


def enumerate_subgroups(dataset: Dataset) -> SubgroupIndex:
    attributes = dataset.schema.attributes
    lattice_size = math.prod(len(a.domain) for a in attributes)
    names = tuple(a.name for a in attributes)
    if dataset.n == 0:
        return SubgroupIndex(names, (), np.zeros(0, dtype=np.intp), 0, lattice_size)

    # unique rows come back sorted by code, i.e. by schema domain order
    rows, inverse = np.unique(dataset.codes, axis=0, return_inverse=True)
    domains = [a.domain for a in attributes]
    keys = tuple(SubgroupKey(tuple(domains[j][c] for j, c in enumerate(row))) for row in rows.tolist())
    assignment = np.asarray(inverse, dtype=np.intp).reshape(-1)
    assignment.setflags(write=False)
    return SubgroupIndex(
        attributes=names,
        keys=keys,
        assignment=assignment,
        n=dataset.n,
        lattice_size=lattice_size,
    )


def ratio_label(positives: int, negatives: int) -> str:
    if positives == 0:
        return '0:1'
    if negatives == 0:
        return '1:0'
    ratio = negatives / positives
    return f"1:{round(ratio)}" if ratio >= 10 else f"1:{ratio:.2g}"


@dataclass(frozen=True)
class ScarcityRow:
    key: SubgroupKey
    count: int
    share: float
    positives: int
    negatives: int

    @property
    def cir(self) -> float:
        """Negatives per positive; inf when the subgroup has no positive."""
        return self.negatives / self.positives if self.positives else math.inf

    @property
    def cir_label(self) -> str:
        return ratio_label(self.positives, self.negatives)


@dataclass(frozen=True)
class ScarcityReport:
    n: int
    lattice_size: int
    rows: tuple[ScarcityRow, ...]

    def row(self, key: SubgroupKey) -> ScarcityRow:
        for row in self.rows:
            if row.key == key:
                return row
        raise KeyError(key)

    @property
    def empty_subgroups(self) -> int:
        return self.lattice_size - len(self.rows)


def scarcity_report(index: SubgroupIndex, dataset: Dataset) -> ScarcityReport:
    if dataset.labels is None or dataset.missing_labels:
        raise MissingLabels(dataset.missing_labels)
    counts = index.counts
    positives = np.bincount(index.assignment, weights=(dataset.labels == 1).astype(float), minlength=len(index.keys)).astype(np.int64)
    rows = [
        (i, ScarcityRow(
            key=key,
            count=int(counts[i]),
            share=int(counts[i]) / index.n,
            positives=int(positives[i]),
            negatives=int(counts[i] - positives[i]),
        ))
        for i, key in enumerate(index.keys)
    ]
    rows.sort(key=lambda item: (-item[1].count, item[0]))
    return ScarcityReport(n=index.n, lattice_size=index.lattice_size, rows=tuple(row for _, row in rows))
