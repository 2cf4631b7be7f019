# deobstruct.core.errors
#
# One exception tree for the whole package. Every class also derives from the
# builtin a caller would naturally catch (ValueError for bad input,
# ArithmeticError for numeric blow-ups), so plain `except ValueError` sites
# keep working.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

from pathlib import Path
from typing import Any, Optional


class DeobstructError(Exception):
    """Root of every error raised on purpose by this package."""


class ValidationError(DeobstructError, ValueError):
    """A value violates its type's invariants (range, finiteness, emptiness)."""


class ShapeError(ValidationError):
    """Spatial or feature dimensions do not agree."""


class ParameterError(ValidationError):
    """An operation parameter is outside its accepted domain."""


class NumericError(DeobstructError, ArithmeticError):
    """Non-finite activations or losses.

    ``diagnostics`` carries whatever the raiser could summarise about the
    offending step (tensor statistics, step number, dump path).
    """

    def __init__(self, message: str, diagnostics: Optional[dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.diagnostics: dict[str, Any] = dict(diagnostics or {})


class LoadError(DeobstructError):
    """A file or directory could not be read back into a model object."""

    def __init__(self, message: str, path: Optional[Path | str] = None) -> None:
        super().__init__(message)
        self.path = str(path) if path is not None else None
