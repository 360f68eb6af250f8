"""Exception types shared across the engine.

Two broad families: validation errors (bad inputs, bad schemas, bad
parameters) and client errors (anything that went wrong talking to a
generation or judge backend). The CLI maps validation errors to exit
code 2 and client errors to exit code 3.
"""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(EngineError):
    """Invalid input, parameter, or file schema."""


class EmptyKeywordError(ValidationError):
    """Keyword counting requires a non-empty keyword."""


class InvalidSpecError(ValidationError):
    """A constraint item or spec violates its structural invariants."""


class NonPositiveLMaxError(ValidationError):
    """Length budget must be a positive integer."""


class RcOutOfRangeError(ValidationError):
    """Correctness score must lie in [0, 1]."""


class NotNormalizedError(ValidationError):
    """Probability vector entries must be nonnegative and sum to 1."""


class EmptyBatchError(ValidationError):
    """Token selection requires a non-empty batch."""


class BadPercentError(ValidationError):
    """Selection percentage must lie in (0, 100]."""


class EmptySelectionError(ValidationError):
    """Loss over selected tokens requires at least one selected token."""


class GroupTooSmallError(ValidationError):
    """Group-relative advantages need at least two rewards."""


class MissingAdvantageError(ValidationError):
    """Every token record must carry an advantage for covariance math."""


class BadTemperatureError(ValidationError):
    """Softmax temperature must be strictly positive."""


class EmptyBaseError(ValidationError):
    """Prompt instantiation requires a non-empty base instruction."""


class UnsatisfiableTemplateError(EngineError):
    """Slot sampling failed to produce a valid constraint item."""


class RatioOutOfRangeError(ValidationError):
    """Pass ratio must lie in [0, 1]."""


class EmptyFieldError(ValidationError):
    """Judge prompt construction requires non-empty question and answer."""


class NoScoreFoundError(EngineError):
    """Judge output contains no double-bracketed score."""


class ScoreOutOfRangeError(EngineError):
    """Judge score must lie in [1, 10]."""


class SchemaError(ValidationError):
    """A serialized file does not match its documented schema."""


class ClientError(EngineError):
    """Base class for generation/judge client failures."""


class TransportError(ClientError):
    """Retryable network or server failure."""


class AuthError(ClientError):
    """Credential rejected; not retryable."""


class RateLimitedError(ClientError):
    """Server asked us to back off; carries an optional retry-after hint."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class MalformedResponseError(ClientError):
    """Backend reply did not contain the expected completions."""
