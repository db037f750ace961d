class ExporterError(Exception):
    """Base class for everything this package raises on purpose."""


class ValidationError(ExporterError):
    pass


class FormatError(ValidationError):
    """Malformed input file; offset points at the offending byte when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ExportUnavailableError(ExporterError):
    """The requested transport cannot run (missing credentials or fixtures)."""
