"""Offline LULC pipeline: tiling, batching, compositing, and urbanization forecasting."""

from .errors import (
    DataUnavailableError,
    DegenerateLatitudeError,
    FormatError,
    PipelineError,
    UndefinedMetricError,
    ValidationError,
)

__all__ = [
    "DataUnavailableError",
    "DegenerateLatitudeError",
    "FormatError",
    "PipelineError",
    "UndefinedMetricError",
    "ValidationError",
]

__version__ = "0.1.0"
