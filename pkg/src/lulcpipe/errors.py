"""Exception hierarchy shared by all pipeline stages.

The CLI maps these onto exit codes: ValidationError -> 1,
DataUnavailableError -> 2, I/O failures (OSError) -> 3.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PipelineError):
    """Invalid argument, malformed input, or violated precondition."""


class DegenerateLatitudeError(ValidationError):
    """Longitude step is undefined at the poles."""


class FormatError(ValidationError):
    """A serialized artifact is malformed.

    ``offset`` is the byte offset (binary formats) or line number
    (text formats) where parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class UndefinedMetricError(ValidationError):
    """A metric is mathematically undefined for the given inputs."""


class DataUnavailableError(PipelineError):
    """A required upstream artifact or data slice is missing."""
