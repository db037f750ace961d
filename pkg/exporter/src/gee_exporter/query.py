"""Pure query descriptors for the Dynamic World collection."""

import dataclasses
import datetime

from .errors import ValidationError
from .manifest import ExportTask

COLLECTION_ID = "GOOGLE/DYNAMICWORLD/V1"
# first Sentinel-2 scene covered by Dynamic World
AVAILABILITY_START = datetime.date(2015, 6, 27)

COMPOSITE = "composite"
COLLECTION = "collection"


@dataclasses.dataclass(frozen=True)
class QueryDescriptor:
    """Everything an engine request needs, as a plain comparable value.

    ``date_end`` is exclusive. ``mode`` is "composite" for one aggregated
    image per window or "collection" for every scene in the window.
    """

    collection: str
    bbox: tuple[float, float, float, float]
    date_start: str
    date_end: str
    bands: tuple[str, ...]
    scale_m: float
    mode: str

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["bbox"] = list(self.bbox)
        doc["bands"] = list(self.bands)
        return doc


def build_query(task: ExportTask, scale_m: float = 10.0, mode: str = COMPOSITE) -> QueryDescriptor:
    if mode not in (COMPOSITE, COLLECTION):
        raise ValidationError(f"unknown query mode {mode!r}")
    if scale_m <= 0:
        raise ValidationError(f"scale must be positive, got {scale_m}")
    min_lat, min_lon, max_lat, max_lon = task.bbox
    if not -90.0 <= min_lat < max_lat <= 90.0:
        raise ValidationError(f"bbox latitudes out of range: {task.bbox}")
    if not -180.0 <= min_lon <= 180.0 or not -180.0 <= max_lon <= 180.0:
        raise ValidationError(f"bbox longitudes out of range: {task.bbox}")
    if min_lon >= max_lon:
        raise ValidationError(f"bbox crosses the antimeridian, which is unsupported: {task.bbox}")
    if task.date_start < AVAILABILITY_START:
        raise ValidationError(
            f"window starts {task.date_start}, before Dynamic World availability "
            f"({AVAILABILITY_START})"
        )
    return QueryDescriptor(
        collection=COLLECTION_ID,
        bbox=task.bbox,
        date_start=task.date_start.isoformat(),
        date_end=task.date_end.isoformat(),
        bands=task.bands,
        scale_m=float(scale_m),
        mode=mode,
    )
