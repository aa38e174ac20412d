from .auditor import AuditRunner
from .events import AuditEventListener
from .report import AuditReport

__all__ = ['AuditRunner', 'AuditEventListener', 'AuditReport']
