from __future__ import annotations

from typing import Any


class CidmlError(Exception):
    """Base error; `exit_code` is what the CLI returns for it."""

    exit_code: int = 4

    def __init__(self, message: str, *, details: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.details: dict[str, Any] = dict(details or {})
        self.stage: str | None = None

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ArgumentError(CidmlError, ValueError):
    exit_code = 1


class ConfigError(CidmlError):
    exit_code = 2

    def __init__(self, message: str, *, path: str | None = None, details: dict[str, Any] | None = None) -> None:
        # path is a JSON path such as $.weighting.alpha
        super().__init__(f"{path}: {message}" if path else message, details=details)
        self.path = path


class DataError(CidmlError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ValidationError(DataError):
    def __init__(
        self,
        message: str,
        *,
        row: int | None = None,
        column: str | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message, details=details)
        self.row = row
        self.column = column


class EstimationError(CidmlError):
    exit_code = 4


class NumericalError(EstimationError):
    pass
