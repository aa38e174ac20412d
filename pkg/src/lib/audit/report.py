import math
from dataclasses import dataclass, field
from typing import Any, Protocol

from settings import REPORT_VERSION, SIGNIFICANT_DIGITS
from .config import AuditConfig, MetricName, Typology
from .dataset import ScarcityReport


class MetricOutcome(Protocol):
    @property
    def violated(self) -> bool: ...

    def to_dict(self) -> dict: ...


INF = 'inf'

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_ERROR = 2


def normalize(value: Any) -> Any:
    """
    Rewrites a report tree for stable rendering: floats keep 12 significant
    digits, +inf becomes the "inf" sentinel and NaN becomes null.
    """
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, float):
        if math.isnan(value):
            return None
        if math.isinf(value):
            return INF if value > 0 else f"-{INF}"
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}") + 0.0
    if isinstance(value, int):
        return value
    if isinstance(value, dict):
        return {str(k): normalize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [normalize(v) for v in value]
    if hasattr(value, 'item'):
        return normalize(value.item())
    return str(value)


@dataclass(frozen=True)
class MetricEntry:
    metric: MetricName
    result: MetricOutcome

    @property
    def typology(self) -> Typology:
        return self.metric.typology

    @property
    def violated(self) -> bool:
        return self.result.violated

    def to_dict(self) -> dict:
        return {
            'metric': str(self.metric),
            'typology': str(self.typology),
            'violated': self.violated,
            'result': self.result.to_dict(),
        }


@dataclass(frozen=True)
class AuditReport:
    command: str
    config: AuditConfig | None
    summary: dict[str, Any]
    entries: tuple[MetricEntry, ...] = ()
    scarcity: ScarcityReport | None = None
    validation: dict[str, Any] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def violations(self) -> list[str]:
        return [str(e.metric) for e in self.entries if e.violated]

    @property
    def exit_code(self) -> int:
        return EXIT_VIOLATIONS if self.violations else EXIT_OK

    def to_dict(self) -> dict:
        out: dict[str, Any] = {'report_version': REPORT_VERSION, 'command': self.command}
        if self.config is not None:
            out['config'] = self.config.model_dump(mode='json')
        out['summary'] = dict(self.summary)
        if self.validation is not None:
            out['validation'] = self.validation
        if self.scarcity is not None:
            out['scarcity'] = scarcity_to_dict(self.scarcity)
        out['metrics'] = [e.to_dict() for e in self.entries]
        out['violations'] = self.violations
        out.update(self.extra)
        return normalize(out)


def scarcity_to_dict(report: ScarcityReport) -> dict:
    return {
        'n': report.n,
        'lattice_size': report.lattice_size,
        'occupied': len(report.rows),
        'empty': report.empty_subgroups,
        'rows': [
            {
                'subgroup': row.key.label,
                'count': row.count,
                'share': row.share,
                'positives': row.positives,
                'negatives': row.negatives,
                'cir': row.cir,
                'cir_label': row.cir_label,
            }
            for row in report.rows
        ],
    }
