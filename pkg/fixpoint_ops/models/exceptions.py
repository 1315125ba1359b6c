# models/exceptions.py

from typing import List, Optional


class FixpointError(Exception):
    """Base class for every error raised by the toolkit"""


class DomainError(FixpointError):
    """A point lies outside the region a map or set is defined on"""

    def __init__(self, message: str, coordinate: Optional[int] = None, value: Optional[float] = None):
        super().__init__(message)
        self.coordinate = coordinate
        self.value = value


class DimensionError(FixpointError):
    """Two operands do not share a dimension"""

    def __init__(self, expected: int, actual: int):
        super().__init__(f"Dimension mismatch: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class ConfigError(FixpointError):
    """
    Invalid parameters, plans or experiment files.

    Each diagnostic is a dict with a ``field`` and optionally a ``line`` key so
    that the CLI can point at the offending entry.
    """

    def __init__(self, message: str, diagnostics: Optional[List[dict]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = "; ".join(
            f"{d.get('field', '?')}"
            + (f" (line {d['line']})" if d.get("line") is not None else "")
            + f": {d.get('message', '')}"
            for d in self.diagnostics
        )
        return f"{base} [{details}]"


__all__ = ['FixpointError', 'DomainError', 'DimensionError', 'ConfigError']
