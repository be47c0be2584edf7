"""
Skewflow Error Handler Module

Exception hierarchy for the toolkit and the mapping from failures to CLI
exit codes (2 validation, 3 numerical failure, 4 property violation).
"""

from datetime import datetime
from typing import Any

import structlog


logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_PROPERTY = 4


class SkewflowError(Exception):
    """
    Base exception for every failure raised by the toolkit.
    """

    exit_code: int = EXIT_NUMERICAL

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        self.message = message
        self.details = details or {}
        self.timestamp = datetime.now()
        super().__init__(self.message)

    def __str__(self) -> str:
        return f"{type(self).__name__}: {self.message}"


# ---------------------------------------------------------------------------
# Validation errors (exit code 2)
# ---------------------------------------------------------------------------

class ConfigurationError(SkewflowError):
    """Scenario or parameter set violates a config invariant."""

    exit_code = EXIT_VALIDATION


class ExpressionError(SkewflowError):
    """Base class for expression language failures."""

    exit_code = EXIT_VALIDATION


class ParseError(ExpressionError):
    """
    Syntax error in an expression.

    ``offset`` is the byte offset into the UTF-8 encoded source.
    """

    def __init__(self, message: str, offset: int, expected: str | None = None):
        self.offset = offset
        self.expected = expected
        text = f"{message} at byte {offset}"
        if expected:
            text = f"{text} (expected {expected})"
        super().__init__(text, {"offset": offset, "expected": expected})


class UnknownFunctionError(ParseError):
    """Call to a function outside the supported set."""

    def __init__(self, name: str, offset: int):
        self.name = name
        super().__init__(f"unknown function '{name}'", offset)


class UnboundVariableError(ExpressionError):
    """Evaluation environment lacks a free variable."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound variable '{name}'", {"name": name})


class UnknownNodeError(SkewflowError):
    """Node id outside the graph."""

    exit_code = EXIT_VALIDATION


class UnsupportedError(SkewflowError):
    """Operation not available for this system (e.g. d >= 2 steering)."""

    exit_code = EXIT_VALIDATION


# ---------------------------------------------------------------------------
# Numerical failures (exit code 3)
# ---------------------------------------------------------------------------

class NumericalError(SkewflowError):
    """Base class for numerical failures."""

    exit_code = EXIT_NUMERICAL


class BlowUpError(NumericalError):
    """Trajectory left the blow-up bound before the requested time."""

    def __init__(self, escape_time: float, bound: float):
        self.escape_time = escape_time
        self.bound = bound
        super().__init__(
            f"|x| exceeded {bound:g} at t={escape_time:.6g}",
            {"escape_time": escape_time, "bound": bound},
        )


class NonConvergenceError(NumericalError):
    """Pullback iteration did not settle within the horizon budget."""


class EmptyGraphError(NumericalError):
    """Every trajectory escaped; the chain graph has no edges."""


class EmptyFiberError(NumericalError):
    """No chain-controllable fiber set found."""


class BracketError(NumericalError):
    """Constant-control bisection could not bracket the target."""


class CoastingError(NumericalError):
    """No coasting time within the budget approached the target."""

    def __init__(self, message: str, best_distance: float, best_time: float):
        self.best_distance = best_distance
        self.best_time = best_time
        super().__init__(
            message, {"best_distance": best_distance, "best_time": best_time}
        )


class NoCycleError(NumericalError):
    """Requested node has no cycle inside the chain set."""


class InternalInconsistencyError(NumericalError):
    """Results contradict each other (e.g. SCC members without a path)."""


# ---------------------------------------------------------------------------
# Property violations (exit code 4)
# ---------------------------------------------------------------------------

class PropertyViolationError(SkewflowError):
    """A verified invariant failed."""

    exit_code = EXIT_PROPERTY


class EvaluationWarning(UserWarning):
    """IEEE exceptional result (division by zero, invalid operation)."""


class ErrorHandler:
    """
    Maps exceptions to exit codes and logs them.
    """

    @staticmethod
    def exit_code_for(exc: BaseException) -> int:
        if isinstance(exc, SkewflowError):
            return exc.exit_code
        return EXIT_NUMERICAL

    @staticmethod
    def handle(exc: BaseException) -> int:
        """
        Log ``exc`` with its context and return the matching exit code.

        Args:
            exc: The exception raised by an analysis.

        Returns:
            int: Process exit code.
        """
        code = ErrorHandler.exit_code_for(exc)
        if isinstance(exc, SkewflowError):
            log = logger.warning if code == EXIT_VALIDATION else logger.error
            log("analysis_failed", error=type(exc).__name__, message=exc.message,
                exit_code=code, **exc.details)
        else:
            logger.error("unexpected_failure", error=type(exc).__name__,
                         message=str(exc), exit_code=code)
        return code

    @staticmethod
    def diagnostic(exc: BaseException) -> str:
        """Human-readable one-liner for the error stream."""
        if isinstance(exc, SkewflowError):
            return str(exc)
        return f"{type(exc).__name__}: {exc}"


error_handler = ErrorHandler()


def handle_error(exc: BaseException) -> int:
    """Module-level shortcut for ``error_handler.handle``."""
    return error_handler.handle(exc)
