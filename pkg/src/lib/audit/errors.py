class AuditError(Exception):
    pass


class InvalidSchema(AuditError):
    pass


class ConfigError(AuditError):
    pass


class MissingColumn(AuditError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"Column '{column}' not found in the file header")


class DomainViolation(AuditError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Row {row}: value '{value}' is outside the domain of column '{column}'")


class UnparsableRow(AuditError):
    def __init__(self, row: int | None, reason: str):
        self.row = row
        self.reason = reason
        where = f"Row {row}" if row is not None else "Input"
        super().__init__(f"{where}: {reason}")


class MissingValue(UnparsableRow):
    def __init__(self, row: int, column: str):
        self.column = column
        super().__init__(row, f"missing value in column '{column}'")


class IncompleteRule(AuditError):
    def __init__(self, attribute: str, value: str):
        self.attribute = attribute
        self.value = value
        super().__init__(f"Binarization rule for '{attribute}' does not cover value '{value}'")


class NonNumericThreshold(AuditError):
    def __init__(self, attribute: str, value: str | None = None):
        self.attribute = attribute
        self.value = value
        detail = f" (value '{value}')" if value is not None else ""
        super().__init__(f"Threshold rule applied to non-numeric attribute '{attribute}'{detail}")


class MissingLabels(AuditError):
    def __init__(self, missing: int):
        self.missing = missing
        super().__init__(f"{missing} record(s) lack a ground-truth label")


class LabelsRequired(AuditError):
    def __init__(self, what: str):
        self.what = what
        super().__init__(f"{what} needs ground-truth labels on every record")


class UndefinedRate(AuditError):
    def __init__(self, group: str, stage: str | None = None):
        self.group = group
        self.stage = stage
        where = f" at stage '{stage}'" if stage is not None else ""
        super().__init__(f"Rate for '{group}' is undefined{where}: empty denominator")


class ZeroRate(AuditError):
    def __init__(self, group: str, stage: str):
        self.group = group
        self.stage = stage
        super().__init__(f"Rate for '{group}' at stage '{stage}' is zero and cannot divide")


class DegeneratePenalty(AuditError):
    def __init__(self, stage: int):
        self.stage = stage
        super().__init__(f"F({stage}) = -1 makes the penalty product undefined")


class NoEligibleSubgroup(AuditError):
    def __init__(self, metric: str):
        self.metric = metric
        super().__init__(f"{metric}: no subgroup left after support filtering")


class InvalidPipeline(AuditError):
    def __init__(self, violations: list):
        self.violations = violations
        super().__init__(f"Pipeline trace has {len(violations)} monotone-label violation(s)")
