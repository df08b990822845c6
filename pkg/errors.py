"""
Exception hierarchy for the neuro_rbm toolkit.

Every error raised by the library derives from ``NeuroRbmError`` and also from
the builtin exception a caller would naturally catch (``ValueError`` for bad
inputs, ``RuntimeError`` for numerical failures, ``FileNotFoundError`` for
missing artifacts). The CLI maps them onto process exit codes with
``exit_code_for``.
"""

from typing import List, Optional


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_MISSING = 3


class NeuroRbmError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(NeuroRbmError, ValueError):
    """Array shapes that must agree do not."""


class EnumerationCapError(NeuroRbmError, ValueError):
    """Exact enumeration requested for a model above the configured cap."""


class InvalidParameterError(NeuroRbmError, ValueError):
    """A scalar parameter or configuration value is out of its legal range."""


class SupportMismatchError(NeuroRbmError, ValueError):
    """Two probability tables cannot be compared (shape or zero-support)."""


class ModelFormatError(NeuroRbmError, ValueError):
    """A model, network or dataset file is malformed or truncated."""


class CompileError(NeuroRbmError, ValueError):
    """The model cannot be mapped onto the substrate under the given config."""


class RoutingError(NeuroRbmError, ValueError):
    """A route or external event addresses a core or axon that does not exist."""


class DivergentTrainingError(NeuroRbmError, RuntimeError):
    """A training update produced non-finite parameters."""


class NumericalError(NeuroRbmError, RuntimeError):
    """A log-space accumulation produced a non-finite value."""


class ValidationFailure(NeuroRbmError, RuntimeError):
    """
    Raised when a validation pass finds violations.

    Attributes
    ----------
    violations: list of human-readable violation strings
    """

    def __init__(self, message: str, violations: Optional[List[str]] = None):
        super().__init__(message)
        self.violations = list(violations or [])


class MissingPrerequisiteError(NeuroRbmError, FileNotFoundError):
    """A required input artifact (model, dataset, network) is absent."""


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception onto the CLI exit-code convention.

    Args
    ----
    exc: The exception that terminated a command

    Returns
    -------
    2 for validation failures, 3 for missing prerequisites, 1 otherwise
    """
    if isinstance(exc, ValidationFailure):
        return EXIT_VALIDATION
    if isinstance(exc, (MissingPrerequisiteError, FileNotFoundError)):
        return EXIT_MISSING
    return EXIT_USAGE
