"""
Error hierarchy for aslpinn
"""
from typing import Any, Dict, Optional


class AslPinnError(Exception):
    """Base class for every error raised by this package"""


class ParameterDomainError(AslPinnError, ValueError):
    """Haemodynamic parameters or sample times outside their physical domain"""


class ConfigurationError(AslPinnError, ValueError):
    """Invalid configuration values"""


class UsageError(AslPinnError):
    """API misuse: mismatched lengths, values missing from a record, unknown methods"""


class DatasetError(AslPinnError):
    """Dataset content cannot be used"""


class DatasetParseError(DatasetError):
    """Malformed dataset or map file"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"Invalid field '{field}': {message}")


class SchemaVersionError(DatasetError):
    """Dataset written with an unsupported schema version"""

    def __init__(self, found: Any, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"Unsupported schema_version {found!r} (expected {expected})")


class UndefinedMetricError(AslPinnError, ValueError):
    """Metric has no defined value for the given inputs"""


class TrainingDivergedError(AslPinnError):
    """Composite loss became non-finite during training"""

    def __init__(self, iteration: int, snapshot: Optional[Dict[str, float]] = None):
        self.iteration = iteration
        self.snapshot = dict(snapshot or {})
        details = ", ".join(f"{k}={v:.6g}" for k, v in self.snapshot.items())
        super().__init__(f"Non-finite loss at iteration {iteration} ({details})")
