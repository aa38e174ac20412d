import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from lib.audit import AuditEventListener, AuditReport
from lib.audit.calibration import load_calibration
from lib.audit.config import AuditConfig, load_config
from lib.audit.dataset import LoadOptions, binarize, load_csv, load_schema, write_csv
from lib.audit.errors import AuditError, ConfigError, InvalidPipeline
from lib.audit.handlers import get_writer
from lib.audit.report import EXIT_ERROR, EXIT_OK
from lib.audit.scenarios import ScenarioSpec, generate
from lib.audit.sequential import PipelineTrace, load_pipeline_csv, load_pipeline_schema, write_pipeline_csv
from settings import LOG_LEVEL, OutputFormat
from tools.main import get_runner

logging.basicConfig(
    format='%(asctime)s [%(levelname)s] %(message)s',
    level=LOG_LEVEL,
    datefmt='%d/%m/%Y %X',
    stream=sys.stderr)

logger = logging.getLogger(__name__)


class AuditLoggingListener(AuditEventListener):
    async def on_audit_start(self, subject: str, total_metrics: int):
        logger.info(f"Starting audit of {subject} with {total_metrics} metric(s)")

    async def on_metric_start(self, metric: str):
        logger.debug(f"Evaluating {metric}")

    async def on_metric_end(self, metric: str, violated: bool):
        logger.info(f"{metric}: {'violated' if violated else 'ok'}")

    async def on_audit_end(self, subject: str, violations: list[str]):
        if violations:
            logger.warning(f"Audit of {subject} found violations in {', '.join(violations)}")
        else:
            logger.info(f"Audit of {subject} found no violations")

    async def on_error(self, error: Exception):
        logger.error(f"An error occurred: {error}")


def _metrics(text: str) -> list[str]:
    return [m.strip() for m in text.split(',') if m.strip()]


def _add_audit_args(parser: argparse.ArgumentParser):
    parser.add_argument('data', type=Path, help="CSV file to audit")
    parser.add_argument('--schema', type=Path, help="Schema JSON (falls back to schema_path in --config)")
    parser.add_argument('--config', type=Path, help="AuditConfig JSON; flags override its fields")
    parser.add_argument('--metrics', type=_metrics, help="Comma separated metric names")
    parser.add_argument('--attributes', type=_metrics, help="Protected attributes for per-attribute metrics")
    parser.add_argument('--condition', help="selection_rate, true_positive_rate, false_positive_rate or accuracy")
    parser.add_argument('--epsilon', type=float)
    parser.add_argument('--operator', choices=['max', 'sum', 'mean'])
    parser.add_argument('--alpha', type=float, help="Additive smoothing of estimated rates")
    parser.add_argument('--min-support', type=int)
    parser.add_argument('--format', choices=[str(f) for f in OutputFormat])
    parser.add_argument('--out', type=Path, help="Report file; standard output when absent")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='multifair', description="Multi-dimensional fairness auditing")
    commands = parser.add_subparsers(dest='command', required=True)

    audit = commands.add_parser('audit', help="Audit a prediction dataset")
    _add_audit_args(audit)
    audit.add_argument('--df-class', choices=['+', '-'], help="Outcome class compared by differential fairness")

    pipeline = commands.add_parser('pipeline', help="Audit a multi-stage decision trace")
    _add_audit_args(pipeline)
    pipeline.add_argument('--f0', type=float, help="Historical bias seed of the sequential recursion")
    pipeline.add_argument('--target', help="Target subgroup, e.g. gender=Female,race=Black")
    pipeline.add_argument('--reference', help="Reference subgroup; best end-to-end acceptance when absent")

    subgroups = commands.add_parser('subgroups', help="Occupied subgroups with counts and class imbalance")
    subgroups.add_argument('data', type=Path)
    subgroups.add_argument('--schema', type=Path, required=True)
    subgroups.add_argument('--calibrate', type=Path, help="CalibrationSpec JSON with candidate binarization rules")
    subgroups.add_argument('--delimiter', default=',')
    subgroups.add_argument('--missing-scope', choices=['schema', 'all'], default='schema')
    subgroups.add_argument('--format', choices=[str(f) for f in OutputFormat])
    subgroups.add_argument('--out', type=Path)

    synth = commands.add_parser('synth', help="Write a synthetic scenario as CSV plus schema JSON")
    synth.add_argument('scenario', choices=['gerrymandering', 'hiring-pipeline', 'random', 'random-trace'])
    synth.add_argument('--out', type=Path, required=True, help="CSV path; the schema goes next to it")
    synth.add_argument('--seed', type=int)
    synth.add_argument('--n', type=int)
    synth.add_argument('--k', type=int)
    synth.add_argument('--stages', type=int)
    synth.add_argument('--ground-truth', choices=['none', 'predictions'])
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides = {
        'schema_path': args.schema,
        'metrics': args.metrics,
        'attributes': args.attributes,
        'condition': args.condition,
        'epsilon': args.epsilon,
        'operator': args.operator,
        'alpha': args.alpha,
        'min_support': args.min_support,
        'output_format': args.format,
    }
    for name in ('df_class', 'f0', 'target', 'reference'):
        overrides[name] = getattr(args, name, None)
    return overrides


def _config(args: argparse.Namespace) -> AuditConfig:
    base = load_config(args.config) if args.config else AuditConfig()
    config = base.merged(_overrides(args))
    if config.schema_path is None:
        raise ConfigError("a schema is required: pass --schema or set schema_path in the config")
    return config


def _emit(report: AuditReport, output_format: str | None, out: Path | None):
    writer = get_writer(output_format, out)
    data = report.to_dict()
    if out is None:
        sys.stdout.buffer.write(writer.render(data))
        sys.stdout.flush()
    else:
        writer.write(data, out)
        logger.info(f"Report written to {out}")


def _audit_command(args: argparse.Namespace) -> int:
    config = _config(args)
    config.check_command(pipeline=False)
    dataset = binarize(load_csv(args.data, load_schema(config.schema_path), config.load))
    runner = get_runner(listeners=[AuditLoggingListener()])
    report = asyncio.run(runner.audit(dataset, config, subject=args.data.name))
    _emit(report, config.output_format, args.out)
    return report.exit_code


def _pipeline_command(args: argparse.Namespace) -> int:
    config = _config(args)
    config.check_command(pipeline=True)
    trace = load_pipeline_csv(args.data, load_pipeline_schema(config.schema_path), config.load)
    runner = get_runner(listeners=[AuditLoggingListener()])
    try:
        report = asyncio.run(runner.audit_pipeline(trace, config, subject=args.data.name))
    except InvalidPipeline as e:
        for violation in e.violations:
            print(f"{violation.individual}: stage '{violation.stage}' {violation.reason}", file=sys.stderr)
        raise
    _emit(report, config.output_format, args.out)
    return report.exit_code


def _subgroups_command(args: argparse.Namespace) -> int:
    options = LoadOptions(delimiter=args.delimiter, missing_scope=args.missing_scope)
    dataset = load_csv(args.data, load_schema(args.schema), options)
    calibration = load_calibration(args.calibrate) if args.calibrate else None
    report = asyncio.run(get_runner().subgroups(dataset, calibration))
    _emit(report, args.format, args.out)
    return EXIT_OK


def _synth_command(args: argparse.Namespace) -> int:
    fields = {'kind': args.scenario}
    for name in ('seed', 'n', 'k', 'stages', 'ground_truth'):
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    try:
        spec = ScenarioSpec.model_validate(fields)
    except ValidationError as e:
        raise ConfigError(f"synth {args.scenario}: {e}") from e
    generated = generate(spec)
    schema_path = args.out.with_suffix('.schema.json')
    if isinstance(generated, PipelineTrace):
        write_pipeline_csv(generated, args.out)
    else:
        write_csv(generated, args.out)
    schema_path.write_text(generated.schema.model_dump_json(indent=2, exclude_none=True), encoding='utf-8')
    logger.info(f"Wrote {generated.n} record(s) to {args.out} and schema to {schema_path}")
    return EXIT_OK


COMMANDS = {
    'audit': _audit_command,
    'pipeline': _pipeline_command,
    'subgroups': _subgroups_command,
    'synth': _synth_command,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (AuditError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
