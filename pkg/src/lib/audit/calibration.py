"""
Search for binarization rules that reproduce known subgroup counts.

Published subgroup tables rarely state the age cut or the race grouping used to
binarize; the sweep tries every combination of candidate rules and ranks them
by how far the resulting subgroup counts land from the targets.
"""
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Mapping

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from .dataset import BinarizationRule, CategoricalRule, Dataset, ThresholdRule, binarize
from .errors import InvalidSchema

logger = logging.getLogger(__name__)


class ThresholdSweep(BaseModel):
    kind: Literal['threshold_sweep'] = 'threshold_sweep'
    start: float
    stop: float
    step: float = Field(default=1.0, gt=0)
    below: str = 'below'
    at_or_above: str = 'at_or_above'
    protected: str | None = None

    @model_validator(mode='after')
    def _ordered(self):
        if self.stop < self.start:
            raise ValueError("sweep stop must not be below start")
        return self

    def rules(self) -> list[ThresholdRule]:
        count = int(round((self.stop - self.start) / self.step)) + 1
        return [
            ThresholdRule(
                threshold=self.start + i * self.step,
                below=self.below,
                at_or_above=self.at_or_above,
                protected=self.protected,
            )
            for i in range(count)
        ]


Candidate = Annotated[CategoricalRule | ThresholdRule | ThresholdSweep, Field(discriminator='kind')]


class CalibrationTarget(BaseModel):
    subgroup: dict[str, str]
    count: int = Field(ge=0)
    positives: int | None = Field(default=None, ge=0)

    @property
    def label(self) -> str:
        return '-'.join(self.subgroup.values())


class CalibrationSpec(BaseModel):
    candidates: dict[str, list[Candidate]]
    targets: list[CalibrationTarget] = Field(min_length=1)
    tolerance: float = Field(default=0.01, ge=0)
    keep: int = Field(default=10, ge=1)

    def expanded(self) -> dict[str, list[BinarizationRule]]:
        out = {}
        for name, candidates in self.candidates.items():
            rules = []
            for candidate in candidates:
                rules.extend(candidate.rules() if isinstance(candidate, ThresholdSweep) else [candidate])
            out[name] = rules
        return out


def load_calibration(path: Path | str) -> CalibrationSpec:
    try:
        return CalibrationSpec.model_validate_json(Path(path).read_text(encoding='utf-8'))
    except ValidationError as e:
        raise InvalidSchema(f"{path}: {e}") from e


@dataclass(frozen=True)
class TargetFit:
    target: CalibrationTarget
    count: int
    positives: int | None

    @property
    def discrepancy(self) -> int:
        out = abs(self.count - self.target.count)
        if self.target.positives is not None and self.positives is not None:
            out += abs(self.positives - self.target.positives)
        return out

    @property
    def relative_error(self) -> float:
        if self.target.count == 0:
            return 0.0 if self.count == 0 else float('inf')
        return abs(self.count - self.target.count) / self.target.count

    def to_dict(self) -> dict:
        return {
            'subgroup': self.target.label,
            'target': self.target.count,
            'count': self.count,
            'target_positives': self.target.positives,
            'positives': self.positives,
            'relative_error': self.relative_error,
        }


@dataclass(frozen=True)
class CalibrationCandidate:
    rules: Mapping[str, BinarizationRule]
    fits: tuple[TargetFit, ...]
    n: int

    @property
    def discrepancy(self) -> int:
        return sum(f.discrepancy for f in self.fits)

    @property
    def exact(self) -> bool:
        return self.discrepancy == 0

    def within(self, tolerance: float) -> bool:
        return all(f.relative_error <= tolerance for f in self.fits)

    def to_dict(self) -> dict:
        return {
            'rules': {name: rule.model_dump() for name, rule in self.rules.items()},
            'discrepancy': self.discrepancy,
            'exact': self.exact,
            'n': self.n,
            'fits': [f.to_dict() for f in self.fits],
        }


@dataclass(frozen=True)
class CalibrationResult:
    candidates: tuple[CalibrationCandidate, ...]
    evaluated: int
    tolerance: float

    @property
    def best(self) -> CalibrationCandidate:
        return self.candidates[0]

    def to_dict(self) -> dict:
        best = self.best
        return {
            'evaluated': self.evaluated,
            'tolerance': self.tolerance,
            'exact': best.exact,
            'within_tolerance': best.within(self.tolerance),
            'best': best.to_dict(),
            'ranked': [c.to_dict() for c in self.candidates],
        }


def _fit(dataset: Dataset, targets: list[CalibrationTarget]) -> tuple[TargetFit, ...]:
    schema = dataset.schema
    fits = []
    for target in targets:
        if set(target.subgroup) != set(schema.names):
            raise InvalidSchema(f"calibration target '{target.label}' must assign exactly {list(schema.names)}")
        mask = np.ones(dataset.n, dtype=bool)
        for j, attribute in enumerate(schema.attributes):
            group = target.subgroup[attribute.name]
            if group not in attribute.domain:
                mask[:] = False
                break
            mask &= dataset.codes[:, j] == attribute.domain.index(group)
        positives = None
        if dataset.labels is not None:
            positives = int(np.count_nonzero(dataset.labels[mask] == 1))
        fits.append(TargetFit(target=target, count=int(np.count_nonzero(mask)), positives=positives))
    return tuple(fits)


def calibrate(dataset: Dataset, spec: CalibrationSpec) -> CalibrationResult:
    """Ranks every combination of candidate rules; exact matches sort first."""
    expanded = spec.expanded()
    for name in expanded:
        dataset.schema.index_of(name)
    names = list(expanded)
    scored: list[tuple[int, int, CalibrationCandidate]] = []
    for order, combination in enumerate(itertools.product(*(expanded[name] for name in names))):
        rules = dict(zip(names, combination))
        binary = binarize(dataset, rules)
        candidate = CalibrationCandidate(rules=rules, fits=_fit(binary, spec.targets), n=dataset.n)
        scored.append((candidate.discrepancy, order, candidate))
    if not scored:
        raise InvalidSchema("calibration needs at least one candidate rule per attribute")
    scored.sort(key=lambda item: (item[0], item[1]))
    logger.info(f"Calibration evaluated {len(scored)} rule set(s); best discrepancy {scored[0][0]}")
    if scored[0][0]:
        logger.warning("No candidate reproduces the target counts exactly; reporting the nearest match")
    return CalibrationResult(
        candidates=tuple(c for _, _, c in scored[:spec.keep]),
        evaluated=len(scored),
        tolerance=spec.tolerance,
    )
