import io
import json
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Iterator

import pandas as pd
from openpyxl import Workbook

from settings import OutputFormat


class BaseReportWriter(ABC):
    """Renders a normalized report dictionary. JSON is canonical; the others are projections of it."""

    @property
    @abstractmethod
    def format(self) -> OutputFormat:
        pass

    @abstractmethod
    def render(self, report: dict) -> bytes:
        pass

    def write(self, report: dict, path: Path) -> Path:
        path.write_bytes(self.render(report))
        return path


def _flatten(value: Any, prefix: str = '') -> Iterator[tuple[str, Any]]:
    if isinstance(value, dict):
        for key, item in value.items():
            yield from _flatten(item, f"{prefix}.{key}" if prefix else str(key))
    elif isinstance(value, list) and any(isinstance(v, (dict, list)) for v in value):
        for i, item in enumerate(value):
            yield from _flatten(item, f"{prefix}[{i}]")
    elif isinstance(value, list):
        yield prefix, ', '.join(str(v) for v in value)
    else:
        yield prefix, value


def metric_rows(report: dict) -> list[dict]:
    """One row per leaf value of every metric result."""
    rows = []
    for entry in report.get('metrics', []):
        for path, value in _flatten(entry['result']):
            rows.append({
                'metric': entry['metric'],
                'typology': entry['typology'],
                'field': path,
                'value': value,
            })
    return rows


class JSONReportWriter(BaseReportWriter):
    @property
    def format(self) -> OutputFormat:
        return OutputFormat.JSON

    def render(self, report: dict) -> bytes:
        return (json.dumps(report, indent=2, ensure_ascii=False, allow_nan=False) + '\n').encode('utf-8')


class TextReportWriter(BaseReportWriter):
    @property
    def format(self) -> OutputFormat:
        return OutputFormat.TEXT

    def render(self, report: dict) -> bytes:
        lines = [f"{report['command']} report (version {report['report_version']})"]
        for key, value in report.get('summary', {}).items():
            lines.append(f"  {key}: {value}")
        scarcity = report.get('scarcity')
        if scarcity:
            lines.append('')
            lines.append(f"subgroups ({scarcity['occupied']} occupied of {scarcity['lattice_size']})")
            for row in scarcity['rows']:
                lines.append(
                    f"  {row['subgroup']:<40} {row['count']:>8} {row['share']:>10.4%}"
                    f" {row['positives']:>8}  CIR {row['cir_label']}"
                )
        calibration = report.get('calibration')
        if calibration:
            lines.append('')
            lines.append(f"calibration: {calibration['evaluated']} rule set(s), exact={calibration['exact']}")
            for name, rule in calibration['best']['rules'].items():
                lines.append(f"  {name}: {rule}")
        for entry in report.get('metrics', []):
            lines.append('')
            flag = 'VIOLATED' if entry['violated'] else 'ok'
            lines.append(f"[{entry['typology']}] {entry['metric']}: {flag}")
            for path, value in _flatten(entry['result']):
                lines.append(f"  {path} = {value}")
        lines.append('')
        violations = report.get('violations', [])
        lines.append(f"violations: {', '.join(violations) if violations else 'none'}")
        return ('\n'.join(lines) + '\n').encode('utf-8')


class CSVReportWriter(BaseReportWriter):
    @property
    def format(self) -> OutputFormat:
        return OutputFormat.CSV

    def render(self, report: dict) -> bytes:
        if report.get('command') == 'subgroups' and report.get('scarcity'):
            frame = pd.DataFrame(report['scarcity']['rows'])
        else:
            frame = pd.DataFrame(metric_rows(report), columns=['metric', 'typology', 'field', 'value'])
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False)
        return buffer.getvalue().encode('utf-8')


class XLSXReportWriter(BaseReportWriter):
    """One sheet per report section."""

    @property
    def format(self) -> OutputFormat:
        return OutputFormat.XLSX

    def render(self, report: dict) -> bytes:
        workbook = Workbook()
        summary = workbook.active
        summary.title = 'summary'
        summary.append(['field', 'value'])
        summary.append(['report_version', report['report_version']])
        summary.append(['command', report['command']])
        for path, value in _flatten(report.get('summary', {})):
            summary.append([path, value])
        summary.append(['violations', ', '.join(report.get('violations', []))])

        scarcity = report.get('scarcity')
        if scarcity and scarcity['rows']:
            sheet = workbook.create_sheet('subgroups')
            columns = list(scarcity['rows'][0])
            sheet.append(columns)
            for row in scarcity['rows']:
                sheet.append([row[c] for c in columns])

        if report.get('metrics'):
            sheet = workbook.create_sheet('metrics')
            sheet.append(['metric', 'typology', 'field', 'value'])
            for row in metric_rows(report):
                sheet.append([row['metric'], row['typology'], row['field'], row['value']])

        buffer = io.BytesIO()
        workbook.save(buffer)
        return buffer.getvalue()


WRITER_REGISTRY: dict[OutputFormat, type[BaseReportWriter]] = {
    OutputFormat.JSON: JSONReportWriter,
    OutputFormat.TEXT: TextReportWriter,
    OutputFormat.CSV: CSVReportWriter,
    OutputFormat.XLSX: XLSXReportWriter,
}

SUFFIX_FORMATS = {
    '.json': OutputFormat.JSON,
    '.txt': OutputFormat.TEXT,
    '.csv': OutputFormat.CSV,
    '.xlsx': OutputFormat.XLSX,
}


def get_writer(output_format: OutputFormat | str | None = None, path: Path | None = None) -> BaseReportWriter:
    """Explicit format first, then the output suffix, then JSON."""
    if output_format is None and path is not None:
        output_format = SUFFIX_FORMATS.get(path.suffix.lower())
    writer_class = WRITER_REGISTRY[OutputFormat(output_format or OutputFormat.JSON)]
    return writer_class()
