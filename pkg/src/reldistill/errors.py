"""Exception hierarchy shared across the toolkit.

Two branches matter for the CLI: ``ValidationError`` (bad inputs, bad
config, bad files; exit code 2) and ``ExternalServiceError`` (a remote
generation or embedding endpoint misbehaved; exit code 3).
"""


class ReldistillError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ReldistillError):
    """Invalid input data, configuration, or file contents."""


class DatasetParseError(ValidationError):
    """A dataset file line could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SchemaViolationError(ValidationError):
    """A label or class name is not part of the active schema."""


class ReferentialIntegrityError(ValidationError):
    """A record references a pair or prediction that does not exist."""


class DegenerateInputError(ValidationError):
    """An input is structurally empty (all-zero mask, empty text, ...)."""


class ConfigurationError(ValidationError):
    """Inconsistent or out-of-range configuration values."""


class InputError(ValidationError):
    """Arguments violate an operation's preconditions."""


class DataCompletenessError(ValidationError):
    """A training example is missing a required companion record."""


class ExternalServiceError(ReldistillError):
    """A remote service failed or returned an unusable reply."""


class RetryableTransportError(ExternalServiceError):
    """Transport-level failure; the call may be retried."""
