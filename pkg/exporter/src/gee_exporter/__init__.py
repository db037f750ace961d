"""Export client for Dynamic World rasters.

Consumes the batch manifest produced by the tiling pipeline, builds one
Earth Engine query per batch and season window, and converts the returned
GeoTIFFs into the pipeline's LRAS raster format. All tests run in replay
mode against recorded fixtures; no network access is required.
"""

from .errors import ExporterError, ExportUnavailableError, FormatError, ValidationError
from .manifest import DW_BANDS, ExportTask, load_manifest, load_tasks, save_tasks
from .query import COLLECTION_ID, QueryDescriptor, build_query
from .export import StatusRow, read_status_csv, run_export

__all__ = [
    "COLLECTION_ID",
    "DW_BANDS",
    "ExportTask",
    "ExporterError",
    "ExportUnavailableError",
    "FormatError",
    "QueryDescriptor",
    "StatusRow",
    "ValidationError",
    "build_query",
    "load_manifest",
    "load_tasks",
    "read_status_csv",
    "run_export",
    "save_tasks",
]
