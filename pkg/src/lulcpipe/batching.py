"""Batch planning: group fishnet tiles into large export rasters.

Exporting tiles one by one is prohibitively slow at region scale, so
tiles are grouped into square batches (default 64 km per side) and each
batch is fetched as a single raster. Every tile then maps to a pixel
window inside its batch raster, from which it can be cropped back out.

The manifest written here is the contract consumed by the exporter; its
field names must not change.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import FormatError, ValidationError
from .geo import FishnetGrid, GeoBoundingBox, TileRef, grid_from_json, grid_to_json

# relative tolerance for requiring tile_size_m to be a whole number of pixels
_PIXEL_ALIGN_RTOL = 1e-6


@dataclass(frozen=True)
class PixelWindow:
    """A rectangle of pixels inside a batch raster, offsets from the top-left."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0:
            raise ValidationError(f"window offsets must be >= 0, got ({self.x0}, {self.y0})")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"window must be at least 1x1, got {self.width} x {self.height}")


@dataclass(frozen=True)
class BatchRef:
    """One batch: indices, id, member tile index ranges (inclusive), and bbox."""

    batch_id: int
    bi: int
    bj: int
    bbox: GeoBoundingBox
    i0: int
    i1: int
    j0: int
    j1: int

    @property
    def tiles_x(self) -> int:
        return self.i1 - self.i0 + 1

    @property
    def tiles_y(self) -> int:
        return self.j1 - self.j0 + 1


@dataclass(frozen=True)
class BatchPlan:
    grid: FishnetGrid
    batch_size_m: float
    tiles_per_batch_x: int
    tiles_per_batch_y: int
    num_batches_x: int
    num_batches_y: int
    resolution_m: float = 10.0

    @property
    def num_batches(self) -> int:
        return self.num_batches_x * self.num_batches_y

    @property
    def tile_px(self) -> int:
        return tile_pixels(self.grid.tile_size_m, self.resolution_m)


def tile_pixels(tile_size_m: float, resolution_m: float) -> int:
    """Pixels per tile side; tile size must be a whole multiple of the resolution."""
    if resolution_m <= 0:
        raise ValidationError(f"resolution_m must be positive, got {resolution_m}")
    px = round(tile_size_m / resolution_m)
    if px < 1 or abs(tile_size_m - px * resolution_m) > _PIXEL_ALIGN_RTOL * tile_size_m:
        raise ValidationError(
            f"tile_size_m {tile_size_m} is not a whole number of {resolution_m} m pixels"
        )
    return px


def plan_batches(grid: FishnetGrid, batch_size_m: float, resolution_m: float = 10.0) -> BatchPlan:
    """Partition the grid's tiles into square batches of ``batch_size_m`` per side.

    Batches never exceed the nominal size (floor), so edge batches absorb
    the remainder rows/columns.
    """
    if not math.isfinite(batch_size_m) or batch_size_m < grid.tile_size_m:
        raise ValidationError(
            f"batch_size_m {batch_size_m} must be >= tile_size_m {grid.tile_size_m}"
        )
    tile_pixels(grid.tile_size_m, resolution_m)  # fail early on misaligned resolution
    tpb = math.floor(batch_size_m / grid.tile_size_m)
    return BatchPlan(
        grid=grid,
        batch_size_m=float(batch_size_m),
        tiles_per_batch_x=tpb,
        tiles_per_batch_y=tpb,
        num_batches_x=math.ceil(grid.num_tiles_x / tpb),
        num_batches_y=math.ceil(grid.num_tiles_y / tpb),
        resolution_m=float(resolution_m),
    )


def batch_ref(plan: BatchPlan, bi: int, bj: int) -> BatchRef:
    if not (0 <= bi < plan.num_batches_x and 0 <= bj < plan.num_batches_y):
        raise ValidationError(
            f"batch index ({bi}, {bj}) outside plan {plan.num_batches_x} x {plan.num_batches_y}"
        )
    grid = plan.grid
    i0 = bi * plan.tiles_per_batch_x
    j0 = bj * plan.tiles_per_batch_y
    i1 = min(i0 + plan.tiles_per_batch_x, grid.num_tiles_x) - 1
    j1 = min(j0 + plan.tiles_per_batch_y, grid.num_tiles_y) - 1
    # longitude steps vary by row, so the union bbox scans the member rows
    north = grid.row_top_lat(j0)
    # same expression as tile_bbox so shared edges compare equal bit for bit
    south = grid.bbox.max_lat - (j1 + 1) * grid.lat_step
    west = math.inf
    east = -math.inf
    for j in range(j0, j1 + 1):
        step = grid.lon_step_for_row(j)
        west = min(west, grid.bbox.min_lon + i0 * step)
        east = max(east, grid.bbox.min_lon + (i1 + 1) * step)
    bbox = GeoBoundingBox(min_lat=south, min_lon=west, max_lat=north, max_lon=east)
    return BatchRef(
        batch_id=bj * plan.num_batches_x + bi, bi=bi, bj=bj, bbox=bbox, i0=i0, i1=i1, j0=j0, j1=j1
    )


def batch_by_id(plan: BatchPlan, batch_id: int) -> BatchRef:
    if not 0 <= batch_id < plan.num_batches:
        raise ValidationError(f"batch_id {batch_id} outside plan with {plan.num_batches} batches")
    return batch_ref(plan, batch_id % plan.num_batches_x, batch_id // plan.num_batches_x)


def iter_batches(plan: BatchPlan):
    for batch_id in range(plan.num_batches):
        yield batch_by_id(plan, batch_id)


def _check_tile(plan: BatchPlan, tile: TileRef):
    grid = plan.grid
    if not (0 <= tile.i < grid.num_tiles_x and 0 <= tile.j < grid.num_tiles_y):
        raise ValidationError(f"tile ({tile.i}, {tile.j}) does not belong to the plan's grid")
    if tile.tile_id != tile.j * grid.num_tiles_x + tile.i or tile.bbox != grid.tile_bbox(tile.i, tile.j):
        raise ValidationError(f"tile {tile.tile_id} was not produced by the plan's grid")


def batch_of_tile(plan: BatchPlan, tile: TileRef) -> BatchRef:
    _check_tile(plan, tile)
    return batch_ref(plan, tile.i // plan.tiles_per_batch_x, tile.j // plan.tiles_per_batch_y)


def batch_raster_size(plan: BatchPlan, batch: BatchRef) -> tuple[int, int]:
    """(width_px, height_px) of a batch raster."""
    px = plan.tile_px
    return batch.tiles_x * px, batch.tiles_y * px


def tile_pixel_window(plan: BatchPlan, batch: BatchRef, tile: TileRef) -> PixelWindow:
    """Where the tile's pixels sit inside the batch raster."""
    _check_tile(plan, tile)
    if not (batch.i0 <= tile.i <= batch.i1 and batch.j0 <= tile.j <= batch.j1):
        raise ValidationError(f"tile {tile.tile_id} is not a member of batch {batch.batch_id}")
    px = plan.tile_px
    return PixelWindow(x0=(tile.i - batch.i0) * px, y0=(tile.j - batch.j0) * px, width=px, height=px)


def _season_dates(season, year: int) -> tuple[str, str]:
    sm, sd = season.start_month_day
    em, ed = season.end_month_day
    return f"{year:04d}-{sm:02d}-{sd:02d}", f"{year:04d}-{em:02d}-{ed:02d}"


def manifest_dict(plan: BatchPlan, years: list[int], season) -> dict:
    # band names live with the raster model; imported here lazily because
    # raster depends on this module for PixelWindow
    from .raster import CLASS_NAMES

    if not years:
        raise ValidationError("years list must be non-empty")
    years = [int(y) for y in years]
    if sorted(set(years)) != years:
        raise ValidationError(f"years must be strictly increasing and unique, got {years}")
    batches = []
    for batch in iter_batches(plan):
        width_px, height_px = batch_raster_size(plan, batch)
        batches.append(
            {
                "batch_id": batch.batch_id,
                "bbox": batch.bbox.as_list(),
                "width_px": width_px,
                "height_px": height_px,
            }
        )
    return {
        "version": 1,
        "tile_size_m": plan.grid.tile_size_m,
        "batch_size_m": plan.batch_size_m,
        "resolution_m": plan.resolution_m,
        "grid": grid_to_json(plan.grid),
        "seasons": [
            {"year": y, "start": _season_dates(season, y)[0], "end": _season_dates(season, y)[1]}
            for y in years
        ],
        "bands": list(CLASS_NAMES) + ["label"],
        "batches": batches,
    }


def write_manifest(plan: BatchPlan, years: list[int], season, out_path) -> None:
    doc = manifest_dict(plan, years, season)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_manifest(path):
    """Load a manifest back into (plan, years, season).

    The plan is recomputed from the stored grid and sizes, then checked
    against the stored batch entries so stale or edited manifests fail
    loudly instead of silently disagreeing.
    """
    from .composite import SeasonalWindow

    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"manifest is not valid JSON: {exc}", offset=exc.pos) from exc
    try:
        if doc["version"] != 1:
            raise FormatError(f"unsupported manifest version {doc['version']}")
        grid = grid_from_json(doc["grid"])
        plan = plan_batches(grid, float(doc["batch_size_m"]), float(doc["resolution_m"]))
        seasons = doc["seasons"]
        batches = doc["batches"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed manifest: {exc}") from exc
    if not seasons:
        raise FormatError("manifest has no seasons")
    if abs(plan.grid.tile_size_m - float(doc["tile_size_m"])) > 0:
        raise FormatError("manifest tile_size_m disagrees with its grid")
    years = []
    window = None
    for entry in seasons:
        try:
            year = int(entry["year"])
            start, end = str(entry["start"]), str(entry["end"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed season entry: {entry!r}") from exc
        w = SeasonalWindow.from_dates(start, end)
        if not (start.startswith(f"{year:04d}-") and end.startswith(f"{year:04d}-")):
            raise FormatError(f"season dates do not match year {year}: {entry!r}")
        if window is None:
            window = w
        elif window != w:
            raise FormatError("manifest seasons use inconsistent month-day windows")
        years.append(year)
    if len(batches) != plan.num_batches:
        raise FormatError(
            f"manifest lists {len(batches)} batches but the plan has {plan.num_batches}"
        )
    for entry in batches:
        try:
            batch = batch_by_id(plan, int(entry["batch_id"]))
            width_px, height_px = batch_raster_size(plan, batch)
            ok = (
                entry["bbox"] == batch.bbox.as_list()
                and int(entry["width_px"]) == width_px
                and int(entry["height_px"]) == height_px
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed batch entry: {entry!r}") from exc
        if not ok:
            raise FormatError(f"batch entry {entry['batch_id']} disagrees with the recomputed plan")
    return plan, years, window
