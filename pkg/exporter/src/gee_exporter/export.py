"""Task runner: fetch each batch-year raster and convert it to LRAS."""

import csv
import dataclasses
import datetime
import os
import pathlib
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import tifffile

from . import lras
from .errors import ExportUnavailableError, FormatError, ValidationError
from .manifest import DONE, FAILED, ExportTask
from .query import COLLECTION, COMPOSITE, build_query

MODEL_PIXEL_SCALE_TAG = 33550
MODEL_TIEPOINT_TAG = 33922

LIVE = "live"
REPLAY = "replay"

_CREDENTIAL_VARS = ("EARTHENGINE_TOKEN", "GOOGLE_APPLICATION_CREDENTIALS")


@dataclasses.dataclass(frozen=True)
class StatusRow:
    batch_id: int
    year: int
    status: str
    reason: str = ""


class _TaskFailure(Exception):
    """Internal: this task failed, the run continues."""


class ReplayFetcher:
    """Serves recorded fixture GeoTIFFs instead of talking to the engine.

    Composite mode expects ``<destination stem>.tif`` in the fixtures
    directory; collection mode expects a ``<destination stem>/`` directory
    of ``YYYY-MM-DD.tif`` scenes.
    """

    def __init__(self, fixtures_dir):
        self.fixtures_dir = pathlib.Path(fixtures_dir)
        if not self.fixtures_dir.is_dir():
            raise ValidationError(f"fixtures directory not found: {self.fixtures_dir}")
        self.fetch_count = 0
        self._lock = threading.Lock()

    def fetch(self, task: ExportTask, mode: str) -> list[tuple[datetime.date, pathlib.Path]]:
        stem = pathlib.Path(task.destination).stem
        if mode == COMPOSITE:
            path = self.fixtures_dir / f"{stem}.tif"
            if not path.is_file():
                raise _TaskFailure(f"fixture missing: {path.name}")
            items = [(task.date_start, path)]
        else:
            scene_dir = self.fixtures_dir / stem
            if not scene_dir.is_dir():
                raise _TaskFailure(f"fixture scene directory missing: {scene_dir.name}")
            items = []
            for path in sorted(scene_dir.glob("*.tif")):
                try:
                    ts = datetime.date.fromisoformat(path.stem)
                except ValueError:
                    raise _TaskFailure(f"fixture scene has a non-date name: {path.name}")
                items.append((ts, path))
            if not items:
                raise _TaskFailure(f"fixture scene directory is empty: {scene_dir.name}")
        with self._lock:
            self.fetch_count += len(items)
        return items


def _require_live_credentials() -> None:
    if not any(os.environ.get(var) for var in _CREDENTIAL_VARS):
        raise ExportUnavailableError(
            "live mode requires Earth Engine credentials "
            f"(set one of {', '.join(_CREDENTIAL_VARS)})"
        )


def _read_geotiff(path, task: ExportTask) -> tuple[np.ndarray, tuple[float, ...]]:
    try:
        with tifffile.TiffFile(path) as tif:
            data = tif.asarray()
            tags = tif.pages[0].tags
            scale = tags.get(MODEL_PIXEL_SCALE_TAG)
            tiepoint = tags.get(MODEL_TIEPOINT_TAG)
            scale = None if scale is None else tuple(float(v) for v in scale.value)
            tiepoint = None if tiepoint is None else tuple(float(v) for v in tiepoint.value)
    except (tifffile.TiffFileError, ValueError, OSError) as exc:
        raise _TaskFailure(f"unreadable GeoTIFF: {exc}")
    if data.ndim != 3 or data.shape != (len(task.bands), task.height_px, task.width_px):
        raise _TaskFailure(
            f"expected {len(task.bands)} x {task.height_px} x {task.width_px} samples, "
            f"got {data.shape}"
        )
    if data.dtype != np.float32:
        raise _TaskFailure(f"expected float32 samples, got {data.dtype}")
    if scale is None or tiepoint is None:
        raise _TaskFailure("GeoTIFF is missing georeferencing tags")
    sx, sy = scale[0], scale[1]
    origin_x, origin_y = tiepoint[3], tiepoint[4]
    return data, (origin_x, sx, 0.0, origin_y, 0.0, -sy)


def _convert(task: ExportTask, timestamp, tiff_path, out_path: pathlib.Path) -> None:
    data, geotransform = _read_geotiff(tiff_path, task)
    label_index = task.bands.index("label")
    label = data[label_index]
    probs = np.delete(data, label_index, axis=0)

    missing = np.isnan(label)
    finite = label[~missing]
    if finite.size and not bool(((finite >= 0) & (finite <= 8) & (finite == np.rint(finite))).all()):
        raise _TaskFailure("label band is not integral class values in [0, 8]")
    label_u8 = np.where(missing, lras.LABEL_NODATA, np.rint(label)).astype(np.uint8)

    probs_path = out_path.with_suffix(".probs.lras")
    lras.write_lras(probs_path, np.ascontiguousarray(probs), geotransform)
    lras.write_sidecar(probs_path, timestamp, task.batch_id, task.year)
    lras.write_lras(out_path, label_u8, geotransform)
    # the label sidecar is written last and doubles as the task's commit marker
    lras.write_sidecar(out_path, timestamp, task.batch_id, task.year)


def _already_exported(paths: list[pathlib.Path]) -> bool:
    for out_path in paths:
        files = [out_path, out_path.with_suffix(".probs.lras"), lras.sidecar_path(out_path)]
        if not all(p.is_file() for p in files):
            return False
    return True


def run_export(
    tasks,
    mode: str,
    out_dir,
    fixtures_dir=None,
    status_path=None,
    concurrency: int = 4,
    scale_m: float = 10.0,
    per_timestamp: bool = False,
) -> tuple[list[ExportTask], list[StatusRow]]:
    """Run every task, skipping ones already on disk; failures do not stop the run.

    Returns the tasks with final statuses plus one status row per task,
    sorted by (batch_id, year). When ``status_path`` is given, rows are also
    appended to that CSV as tasks complete.
    """
    if mode not in (LIVE, REPLAY):
        raise ValidationError(f"unknown export mode {mode!r}")
    if concurrency < 1:
        raise ValidationError(f"concurrency must be >= 1, got {concurrency}")
    if mode == LIVE:
        _require_live_credentials()
        raise ExportUnavailableError(
            "the live Earth Engine transport is not part of this build; "
            "run replay mode against recorded fixtures"
        )
    if fixtures_dir is None:
        raise ValidationError("replay mode requires a fixtures directory")
    # callers may pass a ReplayFetcher to observe fetch counts across runs
    fetcher = fixtures_dir if isinstance(fixtures_dir, ReplayFetcher) else ReplayFetcher(fixtures_dir)

    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    query_mode = COLLECTION if per_timestamp else COMPOSITE

    write_lock = threading.Lock()
    status_file = pathlib.Path(status_path) if status_path is not None else None
    if status_file is not None and not status_file.exists():
        status_file.parent.mkdir(parents=True, exist_ok=True)
        status_file.write_text("batch_id,year,status,reason\n", encoding="utf-8")

    def append_row(row: StatusRow) -> None:
        if status_file is None:
            return
        with write_lock:
            with open(status_file, "a", encoding="utf-8", newline="") as fh:
                csv.writer(fh).writerow([row.batch_id, row.year, row.status, row.reason])

    def one(task: ExportTask) -> tuple[ExportTask, StatusRow]:
        out_path = out_dir / task.destination
        try:
            descriptor = build_query(task, scale_m=scale_m, mode=query_mode)
            items = None
            if query_mode == COMPOSITE:
                done_paths = [out_path]
            else:
                items = fetcher.fetch(task, query_mode)
                stem = out_path.stem
                done_paths = [out_path.with_name(f"{stem[: -len(task.window_token)]}{ts.isoformat()}.lras") for ts, _ in items]
            if task.status == DONE or _already_exported(done_paths):
                row = StatusRow(task.batch_id, task.year, DONE, "already exported")
                return task.with_status(DONE), row
            if items is None:
                items = fetcher.fetch(task, descriptor.mode)
                done_paths = [out_path]
            for (ts, tiff_path), target in zip(items, done_paths):
                _convert(task, ts, tiff_path, target)
            row = StatusRow(task.batch_id, task.year, DONE)
            return task.with_status(DONE), row
        except (_TaskFailure, ValidationError, OSError) as exc:
            row = StatusRow(task.batch_id, task.year, FAILED, str(exc))
            return task.with_status(FAILED), row

    results = []
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(one, t) for t in tasks]
        for future in futures:
            task, row = future.result()
            append_row(row)
            results.append((task, row))

    results.sort(key=lambda pair: (pair[0].batch_id, pair[0].year))
    return [t for t, _ in results], [r for _, r in results]


def read_status_csv(path) -> list[StatusRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["batch_id", "year", "status", "reason"]:
            raise FormatError(f"unexpected status header {header!r}", offset=0)
        rows = []
        for line in reader:
            if len(line) != 4:
                raise FormatError(f"bad status row {line!r}")
            rows.append(StatusRow(int(line[0]), int(line[1]), line[2], line[3]))
    return rows
