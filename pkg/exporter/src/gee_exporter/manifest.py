"""Batch manifest consumption: one export task per batch and year."""

import dataclasses
import datetime
import json
import pathlib

from .errors import FormatError, ValidationError

# Dynamic World band order: nine class probabilities then the label band
DW_BANDS = (
    "water",
    "trees",
    "grass",
    "flooded_vegetation",
    "crops",
    "shrub_and_scrub",
    "built",
    "bare",
    "snow_and_ice",
    "label",
)

PENDING = "pending"
DONE = "done"
FAILED = "failed"
_STATUSES = (PENDING, DONE, FAILED)


@dataclasses.dataclass(frozen=True)
class ExportTask:
    """One batch-year export: where to query, what to fetch, where it lands."""

    batch_id: int
    year: int
    bbox: tuple[float, float, float, float]  # min_lat, min_lon, max_lat, max_lon
    date_start: datetime.date
    date_end: datetime.date
    bands: tuple[str, ...]
    width_px: int
    height_px: int
    destination: str
    status: str = PENDING

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        object.__setattr__(self, "bands", tuple(str(b) for b in self.bands))
        if len(self.bbox) != 4:
            raise ValidationError(f"bbox must have 4 values, got {len(self.bbox)}")
        if not self.bbox[0] < self.bbox[2]:
            raise ValidationError(f"bbox latitudes out of order: {self.bbox}")
        if self.date_start >= self.date_end:
            raise ValidationError(f"date range is empty: {self.date_start} .. {self.date_end}")
        if self.width_px < 1 or self.height_px < 1:
            raise ValidationError(f"raster must be at least 1x1, got {self.width_px} x {self.height_px}")
        if not self.bands:
            raise ValidationError("bands must be non-empty")
        if self.status not in _STATUSES:
            raise ValidationError(f"unknown status {self.status!r}")

    def with_status(self, status: str) -> "ExportTask":
        # transitions are monotone: pending -> done/failed, then frozen
        if status not in _STATUSES:
            raise ValidationError(f"unknown status {status!r}")
        if self.status != PENDING and status != self.status:
            raise ValidationError(f"cannot move a task from {self.status} to {status}")
        return dataclasses.replace(self, status=status)

    @property
    def window_token(self) -> str:
        return f"{self.date_start:%m%d}-{self.date_end:%m%d}"


def _require(doc: dict, key: str):
    if key not in doc:
        raise ValidationError(f"manifest is missing {key!r}")
    return doc[key]


def _parse_date(value, context: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ValidationError(f"{context}: bad date {value!r}") from exc


def load_manifest(path) -> list[ExportTask]:
    """Tasks for every batch x year in the manifest, ordered by (batch_id, year)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}", offset=exc.pos) from exc
    version = _require(doc, "version")
    if version != 1:
        raise ValidationError(f"unsupported manifest version {version!r}")
    bands = tuple(_require(doc, "bands"))
    if bands != DW_BANDS:
        raise ValidationError(f"manifest bands do not match the Dynamic World schema: {bands}")
    seasons = _require(doc, "seasons")
    if not seasons:
        raise ValidationError("manifest has no seasons")
    batches = _require(doc, "batches")
    if not batches:
        raise ValidationError("manifest has no batches")

    windows = []
    for entry in seasons:
        year = int(_require(entry, "year"))
        start = _parse_date(_require(entry, "start"), f"season {year}")
        end = _parse_date(_require(entry, "end"), f"season {year}")
        windows.append((year, start, end))
    if len({y for y, _, _ in windows}) != len(windows):
        raise ValidationError("manifest repeats a season year")

    tasks = []
    seen = set()
    for entry in sorted(batches, key=lambda b: int(_require(b, "batch_id"))):
        batch_id = int(entry["batch_id"])
        if batch_id in seen:
            raise ValidationError(f"manifest repeats batch_id {batch_id}")
        seen.add(batch_id)
        bbox = tuple(float(v) for v in _require(entry, "bbox"))
        for year, start, end in sorted(windows):
            task = ExportTask(
                batch_id=batch_id,
                year=year,
                bbox=bbox,
                date_start=start,
                date_end=end,
                bands=bands,
                width_px=int(_require(entry, "width_px")),
                height_px=int(_require(entry, "height_px")),
                destination="",
            )
            tasks.append(
                dataclasses.replace(
                    task, destination=f"batch_{batch_id}_{year}_{task.window_token}.lras"
                )
            )
    return tasks


def save_tasks(tasks, path) -> None:
    """Audit log: the full task list, JSON, round-trippable."""
    docs = []
    for t in tasks:
        doc = dataclasses.asdict(t)
        doc["date_start"] = t.date_start.isoformat()
        doc["date_end"] = t.date_end.isoformat()
        doc["bbox"] = list(t.bbox)
        doc["bands"] = list(t.bands)
        docs.append(doc)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(docs, fh, indent=2)
        fh.write("\n")


def load_tasks(path) -> list[ExportTask]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            docs = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"audit log is not valid JSON: {exc}", offset=exc.pos) from exc
    tasks = []
    for doc in docs:
        try:
            tasks.append(
                ExportTask(
                    batch_id=int(doc["batch_id"]),
                    year=int(doc["year"]),
                    bbox=tuple(doc["bbox"]),
                    date_start=datetime.date.fromisoformat(doc["date_start"]),
                    date_end=datetime.date.fromisoformat(doc["date_end"]),
                    bands=tuple(doc["bands"]),
                    width_px=int(doc["width_px"]),
                    height_px=int(doc["height_px"]),
                    destination=str(doc["destination"]),
                    status=str(doc["status"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed audit log entry: {exc}") from exc
    return tasks
