from unittest.mock import AsyncMock, MagicMock

import numpy as np
import pytest

from lib.audit.auditor import AuditRunner
from lib.audit.calibration import CalibrationSpec
from lib.audit.config import AuditConfig, MetricName
from lib.audit.errors import ConfigError, InvalidPipeline, LabelsRequired, NoEligibleSubgroup
from lib.audit.events import AuditEventListener
from lib.audit.sequential import ACCEPTED, REJECTED, PipelineTrace
from tools.main import get_runner


@pytest.fixture
def runner():
    return AuditRunner(max_workers=2)


@pytest.fixture
def mock_listener():
    listener = MagicMock(spec=AuditEventListener)
    listener.on_audit_start = AsyncMock()
    listener.on_metric_start = AsyncMock()
    listener.on_metric_end = AsyncMock()
    listener.on_audit_end = AsyncMock()
    listener.on_error = AsyncMock()
    return listener


def config(*metrics, **kwargs):
    return AuditConfig(metrics=list(metrics), **kwargs)


@pytest.mark.asyncio
async def test_initialization(runner):
    assert runner.max_workers == 2
    assert runner.listeners == []


@pytest.mark.asyncio
async def test_add_listener(runner, mock_listener):
    runner.add_listener(mock_listener)
    assert mock_listener in runner.listeners


@pytest.mark.asyncio
async def test_notify_audit_start(runner, mock_listener):
    runner.add_listener(mock_listener)
    await runner._notify_audit_start('dataset', 3)
    mock_listener.on_audit_start.assert_called_once_with('dataset', 3)


@pytest.mark.asyncio
async def test_audit_gerrymandering(runner, gerrymandering):
    report = await runner.audit(gerrymandering, config(MetricName.CUMULATIVE, MetricName.WCF))
    assert [str(e.metric) for e in report.entries] == ['cumulative', 'wcf']
    assert report.entries[0].result.result.value == 0.0
    assert report.entries[1].result.combined.value == 1.0
    assert report.violations == ['wcf']
    assert report.exit_code == 1
    assert report.summary['occupied_subgroups'] == 4


@pytest.mark.asyncio
async def test_requested_order_is_kept(runner, gerrymandering):
    metrics = (MetricName.WCF, MetricName.SPSF, MetricName.GROUP, MetricName.DF, MetricName.CUMULATIVE)
    report = await runner.audit(gerrymandering, config(*metrics))
    assert [e.metric for e in report.entries] == list(metrics)


@pytest.mark.asyncio
async def test_duplicated_metrics_run_once(runner, gerrymandering):
    report = await runner.audit(gerrymandering, config(MetricName.WCF, MetricName.WCF))
    assert len(report.entries) == 1


@pytest.mark.asyncio
async def test_no_metrics(runner, gerrymandering):
    report = await runner.audit(gerrymandering, config())
    assert report.entries == ()
    assert report.exit_code == 0


@pytest.mark.asyncio
async def test_scarcity_only_with_labels(runner, gerrymandering, gerrymandering_with_truth):
    assert (await runner.audit(gerrymandering, config())).scarcity is None
    assert (await runner.audit(gerrymandering_with_truth, config())).scarcity is not None


@pytest.mark.asyncio
async def test_fpsf_needs_labels(runner, gerrymandering):
    with pytest.raises(LabelsRequired):
        await runner.audit(gerrymandering, config(MetricName.FPSF))


@pytest.mark.asyncio
async def test_pipeline_metric_on_dataset(runner, gerrymandering):
    with pytest.raises(ConfigError):
        await runner.audit(gerrymandering, config(MetricName.SEQUENTIAL_GROUP))


@pytest.mark.asyncio
async def test_listener_events(runner, mock_listener, gerrymandering):
    runner.add_listener(mock_listener)
    await runner.audit(gerrymandering, config(MetricName.CUMULATIVE, MetricName.WCF), subject='gerry.csv')
    mock_listener.on_audit_start.assert_called_once_with('gerry.csv', 2)
    assert mock_listener.on_metric_start.call_count == 2
    mock_listener.on_metric_end.assert_any_call('cumulative', False)
    mock_listener.on_metric_end.assert_any_call('wcf', True)
    mock_listener.on_audit_end.assert_called_once_with('gerry.csv', ['wcf'])
    mock_listener.on_error.assert_not_called()


@pytest.mark.asyncio
async def test_metric_error_is_notified(runner, mock_listener, gerrymandering):
    runner.add_listener(mock_listener)
    with pytest.raises(NoEligibleSubgroup):
        await runner.audit(gerrymandering, config(MetricName.WCF, min_support=1000))
    mock_listener.on_error.assert_called_once()
    mock_listener.on_audit_end.assert_not_called()


@pytest.mark.asyncio
async def test_audit_pipeline(runner, hiring):
    report = await runner.audit_pipeline(hiring, config(MetricName.SEQUENTIAL_GROUP))
    values = report.to_dict()['metrics'][0]['result']['attributes'][0]['values']
    assert values[:3] == pytest.approx([0.0, 0.6, 0.375], abs=1e-12)
    assert report.summary['accepted'] == [130, 65, 26]
    assert report.validation == {'ok': True, 'violations': []}
    assert report.exit_code == 1


@pytest.mark.asyncio
async def test_pipeline_subgroup_reference(runner, hiring):
    report = await runner.audit_pipeline(hiring, config(MetricName.SEQUENTIAL_SUBGROUP, target='Female'))
    assert report.extra['reference_subgroup'] == 'Male'
    assert report.entries[0].result.reference == 'Male'


@pytest.mark.asyncio
async def test_pipeline_subgroup_needs_target(runner, hiring):
    with pytest.raises(ConfigError):
        await runner.audit_pipeline(hiring, config(MetricName.SEQUENTIAL_SUBGROUP))


@pytest.mark.asyncio
async def test_invalid_pipeline(runner, hiring):
    outcomes = np.array(hiring.outcomes, copy=True)
    outcomes[0] = (REJECTED, ACCEPTED, ACCEPTED)
    broken = PipelineTrace(schema=hiring.schema, ids=hiring.ids, codes=hiring.codes, outcomes=outcomes)
    with pytest.raises(InvalidPipeline) as e:
        await runner.audit_pipeline(broken, config(MetricName.SEQUENTIAL_GROUP))
    assert e.value.violations[0].individual == hiring.ids[0]


@pytest.mark.asyncio
async def test_subgroups_with_calibration(runner, gerrymandering_with_truth):
    spec = CalibrationSpec.model_validate({
        'candidates': {'race': [{'kind': 'categorical', 'groups': {'W': ['White'], 'B': ['Black']}, 'protected': 'B'}]},
        'targets': [{'subgroup': {'race': 'B', 'gender': 'Male'}, 'count': 40}],
    })
    report = await runner.subgroups(gerrymandering_with_truth, spec)
    assert report.extra['calibration']['exact']
    assert report.scarcity.rows[0].key.label == 'B-Male'
    assert report.entries == ()


@pytest.mark.asyncio
async def test_get_runner(mock_listener):
    runner = get_runner(max_workers=3, listeners=[mock_listener])
    assert runner.max_workers == 3
    assert runner.listeners == [mock_listener]
