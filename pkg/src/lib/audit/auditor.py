import asyncio
import logging
from typing import Callable, List

from settings import MAX_WORKERS
from .calibration import CalibrationSpec, calibrate
from .config import AuditConfig, MetricName
from .cumulative import cumulative_discrimination
from .dataset import Dataset, SubgroupIndex, SubgroupKey, binarize, enumerate_subgroups, scarcity_report
from .errors import ConfigError, InvalidPipeline, LabelsRequired
from .events import AuditEventListener
from .intersectional import differential_fairness, fpsf, spsf, worst_case_fairness
from .metrics import group_discrimination_all
from .report import AuditReport, MetricEntry, MetricOutcome
from .sequential import (
    PipelineTrace,
    SequentialBreakdown,
    best_subgroup,
    sequential_group_fairness,
    sequential_multi,
    sequential_subgroup_fairness,
    validate_pipeline,
)

logger = logging.getLogger(__name__)

Job = Callable[[], MetricOutcome]


class AuditRunner:
    """
    Evaluates the selected metrics over one dataset or pipeline trace.
    Metrics are independent, so they run in a bounded pool of worker threads and
    are reassembled in the order they were requested.
    """

    def __init__(self, max_workers: int = MAX_WORKERS):
        self.max_workers = max_workers
        self.listeners: List[AuditEventListener] = []

    def add_listener(self, listener: AuditEventListener):
        self.listeners.append(listener)

    async def _notify_audit_start(self, subject: str, total_metrics: int):
        for listener in self.listeners:
            await listener.on_audit_start(subject, total_metrics)

    async def _notify_metric_start(self, metric: str):
        for listener in self.listeners:
            await listener.on_metric_start(metric)

    async def _notify_metric_end(self, metric: str, violated: bool):
        for listener in self.listeners:
            await listener.on_metric_end(metric, violated)

    async def _notify_audit_end(self, subject: str, violations: list[str]):
        for listener in self.listeners:
            await listener.on_audit_end(subject, violations)

    async def _notify_error(self, error: Exception):
        for listener in self.listeners:
            await listener.on_error(error)

    async def _evaluate(self, metric: MetricName, job: Job, semaphore: asyncio.Semaphore) -> MetricEntry:
        async with semaphore:
            await self._notify_metric_start(str(metric))
            try:
                result = await asyncio.to_thread(job)
                await self._notify_metric_end(str(metric), result.violated)
                return MetricEntry(metric=metric, result=result)
            except Exception as e:
                await self._notify_error(e)
                raise e

    async def _run(self, subject: str, jobs: list[tuple[MetricName, Job]]) -> tuple[MetricEntry, ...]:
        await self._notify_audit_start(subject, len(jobs))
        semaphore = asyncio.Semaphore(self.max_workers)
        tasks = [self._evaluate(metric, job, semaphore) for metric, job in jobs]
        # gather keeps task order, which is the requested metric order
        entries = tuple(await asyncio.gather(*tasks))
        await self._notify_audit_end(subject, [str(e.metric) for e in entries if e.violated])
        return entries

    @staticmethod
    def _selected(config: AuditConfig) -> list[MetricName]:
        return list(dict.fromkeys(config.metrics))

    def _dataset_jobs(self, dataset: Dataset, config: AuditConfig, index: SubgroupIndex) -> list[tuple[MetricName, Job]]:
        attributes = config.attributes or list(dataset.schema.names)
        for name in attributes:
            dataset.schema.index_of(name)
        cond, eps, alpha = config.condition, config.epsilon, config.alpha
        factories: dict[MetricName, Job] = {
            MetricName.GROUP: lambda: group_discrimination_all(dataset, attributes, cond, eps, alpha),
            MetricName.CUMULATIVE: lambda: cumulative_discrimination(
                dataset, attributes, cond, config.operator, eps, alpha),
            MetricName.SPSF: lambda: spsf(dataset, index, eps, config.operator),
            MetricName.FPSF: lambda: fpsf(dataset, index, eps, config.operator),
            MetricName.DF: lambda: differential_fairness(
                dataset, index, config.df_policy, config.df_class == '+', alpha, config.min_support),
            MetricName.WCF: lambda: worst_case_fairness(dataset, index, cond, config.min_support, alpha),
        }
        return [(metric, factories[metric]) for metric in self._selected(config)]

    async def audit(self, dataset: Dataset, config: AuditConfig, subject: str = 'dataset') -> AuditReport:
        config.check_command(pipeline=False)
        if MetricName.FPSF in config.metrics and not dataset.has_labels:
            raise LabelsRequired('fpsf')
        index = enumerate_subgroups(dataset)
        scarcity = None
        if dataset.has_labels:
            scarcity = scarcity_report(index, dataset)
        summary = _dataset_summary(dataset, index)
        entries = await self._run(subject, self._dataset_jobs(dataset, config, index))
        return AuditReport(command='audit', config=config, summary=summary, entries=entries, scarcity=scarcity)

    def _pipeline_jobs(self, trace: PipelineTrace, config: AuditConfig) -> list[tuple[MetricName, Job]]:
        attributes = config.attributes or list(trace.schema.names)
        for name in attributes:
            trace.schema.index_of(name)
        names = trace.schema.names
        target = SubgroupKey.parse(config.target, names) if config.target else None
        reference = SubgroupKey.parse(config.reference, names) if config.reference else None
        if MetricName.SEQUENTIAL_SUBGROUP in config.metrics and target is None:
            raise ConfigError("sequential_subgroup needs a target subgroup")
        cond = config.condition
        # a per-attribute f0 mapping has no meaning for a single subgroup pair
        subgroup_f0 = 0.0 if isinstance(config.f0, dict) else float(config.f0)
        factories: dict[MetricName, Job] = {
            MetricName.SEQUENTIAL_GROUP: lambda: SequentialBreakdown(tuple(
                sequential_group_fairness(trace, name, cond, config.f0_for(name)) for name in attributes)),
            MetricName.SEQUENTIAL_SUBGROUP: lambda: sequential_subgroup_fairness(
                trace, target, reference, cond, subgroup_f0),
            MetricName.SEQUENTIAL_MULTI: lambda: sequential_multi(trace, attributes, cond, config.operator, config.f0),
        }
        return [(metric, factories[metric]) for metric in self._selected(config)]

    async def audit_pipeline(self, trace: PipelineTrace, config: AuditConfig,
                             subject: str = 'pipeline') -> AuditReport:
        config.check_command(pipeline=True)
        validation = validate_pipeline(trace)
        if not validation.ok:
            raise InvalidPipeline(list(validation.violations))
        jobs = self._pipeline_jobs(trace, config)
        summary = {
            'n': trace.n,
            'stages': list(trace.stage_names),
            'attributes': list(trace.schema.names),
            'reached': [int(trace.reached(t).sum()) for t in range(trace.T)],
            'accepted': [int((trace.outcomes[:, t] == 1).sum()) for t in range(trace.T)],
        }
        extra = {}
        if MetricName.SEQUENTIAL_SUBGROUP in config.metrics and not config.reference:
            extra['reference_subgroup'] = best_subgroup(trace).label
        entries = await self._run(subject, jobs)
        return AuditReport(
            command='pipeline',
            config=config,
            summary=summary,
            entries=entries,
            validation={'ok': True, 'violations': []},
            extra=extra,
        )

    async def subgroups(self, dataset: Dataset, calibration: CalibrationSpec | None = None) -> AuditReport:
        """Scarcity table of the occupied subgroups, after an optional calibration of the binarization."""
        extra = {}
        if calibration is not None:
            result = await asyncio.to_thread(calibrate, dataset, calibration)
            dataset = binarize(dataset, result.best.rules)
            extra['calibration'] = result.to_dict()
        else:
            dataset = binarize(dataset)
        index = enumerate_subgroups(dataset)
        summary = _dataset_summary(dataset, index)
        return AuditReport(
            command='subgroups',
            config=None,
            summary=summary,
            scarcity=scarcity_report(index, dataset),
            extra=extra,
        )


def _dataset_summary(dataset: Dataset, index: SubgroupIndex) -> dict:
    return {
        'n': dataset.n,
        'dropped_rows': dataset.dropped_rows,
        'attributes': list(dataset.schema.names),
        'lattice_size': index.lattice_size,
        'occupied_subgroups': index.occupied,
        'empty_subgroups': index.empty,
    }
