"""Exception hierarchy shared across the package."""


class ActiveILError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ActiveILError):
    """An experiment or generator configuration cannot be honoured."""


class ValidationError(ActiveILError, ValueError):
    """An argument violates a documented precondition."""


class InfeasibleError(ConfigurationError):
    """Requested imbalance cannot be reached under the given constraints."""


class ParseError(ActiveILError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BudgetError(ActiveILError):
    """Labeling budget exhausted."""


class LookupFailure(ActiveILError, KeyError):
    """Unknown sample id."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class TrainingError(ActiveILError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class RequestError(ActiveILError, ValueError):
    """A selection request cannot be served (e.g. k larger than the pool)."""


class CapabilityError(ActiveILError):
    """The model cannot support the requested operation."""


class DegenerateDistributionError(ActiveILError):
    """Minority or majority class set is empty."""


class StateError(ActiveILError):
    """Operation requires state that is not present yet."""
