import logging
from typing import List

from lib.audit import AuditEventListener, AuditRunner
from settings import MAX_WORKERS

logger = logging.getLogger(__name__)


def get_runner(
        max_workers: int = MAX_WORKERS,
        listeners: List[AuditEventListener] = [],
) -> AuditRunner:
    runner = AuditRunner(max_workers=max_workers)
    for listener in listeners:
        runner.add_listener(listener)
    logger.debug(f"Audit runner ready with {max_workers} worker(s) and {len(listeners)} listener(s)")
    return runner
