"""Exception hierarchy shared by all modules."""


class ContactIdError(Exception):
    """Base class for package errors."""


class ConfigurationError(ContactIdError, ValueError):
    """Invalid configuration, index, or model definition."""


class DomainError(ContactIdError, ValueError):
    """Physical parameters outside their admissible domain."""


class EvaluationError(ContactIdError, ArithmeticError):
    """A numeric evaluation produced an undefined or non-finite value."""


class DivergenceError(ContactIdError, ArithmeticError):
    """A rollout produced a non-finite state."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index
