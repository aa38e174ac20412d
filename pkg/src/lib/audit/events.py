from abc import ABC


class AuditEventListener(ABC):
    """
    Base class for audit event listeners.
    All methods are optional - override only the events you need to handle.
    """

    async def on_audit_start(self, subject: str, total_metrics: int):
        """Called when an audit over a dataset or trace starts."""
        pass

    async def on_metric_start(self, metric: str):
        """Called when evaluation of a metric starts."""
        pass

    async def on_metric_end(self, metric: str, violated: bool):
        """Called when evaluation of a metric ends."""
        pass

    async def on_audit_end(self, subject: str, violations: list[str]):
        """Called when every selected metric has been evaluated."""
        pass

    async def on_error(self, error: Exception):
        """Called when an error occurs during the audit."""
        pass
