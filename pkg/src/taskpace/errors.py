"""Exception taxonomy shared by all taskpace modules.

The CLI maps these onto distinct exit codes (see ``taskpace.cli``).
"""


class TaskpaceError(Exception):
    """Base class for all taskpace errors."""


class InvalidInputError(TaskpaceError, ValueError):
    """An argument violates an operation's preconditions."""


class DegenerateInputError(InvalidInputError):
    """Input is structurally valid but degenerate for the requested metric
    (e.g. a zero vector under the inverse-cosine metric)."""


class ConfigError(TaskpaceError, ValueError):
    """A run configuration failed validation."""


class InternalStateError(TaskpaceError, RuntimeError):
    """A scheduler invariant was violated by the caller (e.g. the switch
    test was evaluated without a previous smoothed value)."""


class DivergenceError(TaskpaceError, RuntimeError):
    """Training produced a non-finite value."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class LogParseError(TaskpaceError, ValueError):
    """A run log could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(
            message if line_number is None else f"line {line_number}: {message}"
        )
        self.line_number = line_number
