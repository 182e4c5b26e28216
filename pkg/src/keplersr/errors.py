"""Exception types shared across the package."""


class KeplerSRError(Exception):
    """Base class for all package errors."""


class ArityMismatch(KeplerSRError, ValueError):
    """Constants or feature columns disagree with what an expression needs."""


class ParseError(KeplerSRError, ValueError):
    """Malformed text input.

    ``position`` is the 0-based character offset for equation text, or the
    1-based data row number for CSV input; ``None`` when not applicable.
    """

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)


class RangeError(KeplerSRError, ValueError):
    """A parsed value lies outside its allowed range."""


class SchemaError(KeplerSRError, ValueError):
    """A CSV file is missing required columns."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__(f"missing columns: {', '.join(self.missing)}")


class DomainError(KeplerSRError, ValueError):
    """A parameter lies outside its mathematical domain."""


class ConvergenceError(KeplerSRError, RuntimeError):
    """A numerical fit could not make progress."""


class InsufficientData(KeplerSRError, ValueError):
    """Too few samples for the requested analysis."""


class SurrogateFailure(KeplerSRError, RuntimeError):
    """No usable probe points inside the sampled region."""


class BudgetExhausted(KeplerSRError):
    """Search stopped on a budget limit before finishing enumeration.

    Normally reported through a status field rather than raised; raised
    only by callers that require a non-empty result.
    """
