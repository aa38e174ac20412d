from enum import StrEnum
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, ValidationError

from settings import OutputFormat
from .cumulative import CombineOperator
from .dataset import LoadOptions
from .errors import ConfigError
from .intersectional import PairEpsilonPolicy
from .metrics import Condition


class Typology(StrEnum):
    CUMULATIVE = 'cumulative'
    INTERSECTIONAL = 'intersectional'
    SEQUENTIAL = 'sequential'


class MetricName(StrEnum):
    GROUP = 'group'
    CUMULATIVE = 'cumulative'
    SPSF = 'spsf'
    FPSF = 'fpsf'
    DF = 'df'
    WCF = 'wcf'
    SEQUENTIAL_GROUP = 'sequential_group'
    SEQUENTIAL_SUBGROUP = 'sequential_subgroup'
    SEQUENTIAL_MULTI = 'sequential_multi'

    @property
    def typology(self) -> Typology:
        if self in (MetricName.GROUP, MetricName.CUMULATIVE):
            return Typology.CUMULATIVE
        if self.is_pipeline:
            return Typology.SEQUENTIAL
        return Typology.INTERSECTIONAL

    @property
    def is_pipeline(self) -> bool:
        return self.value.startswith('sequential')


class AuditConfig(BaseModel):
    schema_path: Path | None = None
    metrics: list[MetricName] = []
    condition: Condition = Condition.SELECTION_RATE
    epsilon: float = Field(default=0.0, ge=0)
    pair_epsilon: PairEpsilonPolicy | None = None
    operator: CombineOperator = CombineOperator.MAX
    alpha: float = Field(default=0.0, ge=0)
    min_support: int = Field(default=0, ge=0)
    output_format: OutputFormat | None = None
    # protected attributes for per-attribute metrics; all schema attributes when empty
    attributes: list[str] = []
    df_class: Literal['+', '-'] = '+'
    f0: float | dict[str, float] = 0.0
    target: str | None = None
    reference: str | None = None
    load: LoadOptions = LoadOptions()

    @property
    def df_policy(self) -> PairEpsilonPolicy:
        return self.pair_epsilon or PairEpsilonPolicy(default=self.epsilon)

    def f0_for(self, attribute: str) -> float:
        if isinstance(self.f0, dict):
            return float(self.f0.get(attribute, 0.0))
        return float(self.f0)

    def check_command(self, pipeline: bool):
        wrong = [m for m in self.metrics if m.is_pipeline != pipeline]
        if wrong:
            kind = 'pipeline' if pipeline else 'dataset'
            raise ConfigError(f"metrics {[str(m) for m in wrong]} cannot run on a {kind} input")

    def merged(self, overrides: dict[str, Any]) -> 'AuditConfig':
        """Returns a validated copy with the non-None overrides applied."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return AuditConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(str(e)) from e


def load_config(path: Path | str) -> AuditConfig:
    try:
        return AuditConfig.model_validate_json(Path(path).read_text(encoding='utf-8'))
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
