"""Per-tile class statistics and sliding-window training sequences.

Corrected batch composites are cut back into tiles, each tile-year is
reduced to class proportions over its valid pixels, and the resulting
table feeds the forecasting stage. Frame sequences pair N consecutive
years of label frames with the built proportion at a later target year.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .batching import BatchPlan, batch_raster_size, iter_batches, tile_pixel_window
from .errors import DataUnavailableError, FormatError, ValidationError
from .geo import FishnetGrid
from .raster import BUILT, DTYPE_U8, LABEL_NODATA, NUM_CLASSES, RasterGrid, crop

TABLE_CSV_HEADER = (
    "tile_id,year,water,trees,grass,flooded_vegetation,crops,shrub_and_scrub,"
    "built,bare,snow_and_ice,valid_fraction"
)

DEFAULT_WINDOW = 4  # input frames per sequence
DEFAULT_VALID_THRESHOLD = 0.5  # minimum per-year valid_fraction for sequence membership

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class TileMetricsRow:
    tile_id: int
    year: int
    proportions: tuple[float, ...]
    valid_fraction: float

    def __post_init__(self):
        props = tuple(float(p) for p in self.proportions)
        if len(props) != NUM_CLASSES:
            raise ValidationError(f"expected {NUM_CLASSES} proportions, got {len(props)}")
        if any(p < 0.0 or p > 1.0 for p in props):
            raise ValidationError(f"proportions out of [0, 1]: {props}")
        if not 0.0 <= self.valid_fraction <= 1.0:
            raise ValidationError(f"valid_fraction out of [0, 1]: {self.valid_fraction}")
        if self.valid_fraction > 0.0:
            if abs(sum(props) - 1.0) > _SUM_TOL:
                raise ValidationError(f"proportions sum to {sum(props)}, expected 1")
        elif any(props):
            raise ValidationError("proportions must be all zero when no pixel is valid")
        object.__setattr__(self, "proportions", props)

    @property
    def built(self) -> float:
        return self.proportions[BUILT]


class TileMetricsTable:
    """Rows keyed by (tile_id, year); iteration order is sorted by that key."""

    def __init__(self, rows=()):
        self._rows: dict[tuple[int, int], TileMetricsRow] = {}
        for row in rows:
            self.add(row)

    def add(self, row: TileMetricsRow) -> None:
        key = (row.tile_id, row.year)
        if key in self._rows:
            raise ValidationError(f"duplicate table row for tile {key[0]}, year {key[1]}")
        self._rows[key] = row

    def get(self, tile_id: int, year: int) -> TileMetricsRow | None:
        return self._rows.get((tile_id, year))

    def require(self, tile_id: int, year: int) -> TileMetricsRow:
        row = self.get(tile_id, year)
        if row is None:
            raise DataUnavailableError(f"no table row for tile {tile_id}, year {year}")
        return row

    def rows(self) -> list[TileMetricsRow]:
        return [self._rows[k] for k in sorted(self._rows)]

    def tile_ids(self) -> list[int]:
        return sorted({t for t, _ in self._rows})

    def years(self) -> list[int]:
        return sorted({y for _, y in self._rows})

    def __len__(self) -> int:
        return len(self._rows)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TileMetricsTable):
            return NotImplemented
        return self._rows == other._rows


def class_proportions(r: RasterGrid) -> tuple[tuple[float, ...], float]:
    """(per-class proportions over valid pixels, valid fraction of all pixels)."""
    if r.dtype != DTYPE_U8 or r.bands != 1:
        raise ValidationError("class proportions need a single-band label raster")
    counts = np.bincount(r.data.ravel(), minlength=256)
    total = r.width * r.height
    valid = total - int(counts[LABEL_NODATA])
    if valid == 0:
        return (0.0,) * NUM_CLASSES, 0.0
    props = tuple(float(counts[k]) / valid for k in range(NUM_CLASSES))
    return props, valid / total


def build_table(grid: FishnetGrid, plan: BatchPlan, corrected) -> TileMetricsTable:
    """Table of one row per (unmasked tile, year) from corrected batch rasters.

    ``corrected`` maps (batch_id, year) to the batch's corrected composite.
    """
    if plan.grid != grid:
        raise ValidationError("plan was built for a different grid")
    years = sorted({year for _, year in corrected.keys()})
    table = TileMetricsTable()
    for batch in iter_batches(plan):
        width_px, height_px = batch_raster_size(plan, batch)
        for year in years:
            raster = corrected.get((batch.batch_id, year))
            if raster is None:
                raise DataUnavailableError(
                    f"missing corrected raster for batch {batch.batch_id}, year {year}"
                )
            if (raster.width, raster.height) != (width_px, height_px):
                raise ValidationError(
                    f"batch {batch.batch_id} raster is {raster.width} x {raster.height}, "
                    f"expected {width_px} x {height_px}"
                )
            for j in range(batch.j0, batch.j1 + 1):
                for i in range(batch.i0, batch.i1 + 1):
                    if not grid.included(i, j):
                        continue
                    tile = grid.tile(i, j)
                    window = tile_pixel_window(plan, batch, tile)
                    props, valid_fraction = class_proportions(crop(raster, window))
                    table.add(
                        TileMetricsRow(
                            tile_id=tile.tile_id,
                            year=year,
                            proportions=props,
                            valid_fraction=valid_fraction,
                        )
                    )
    return table


@dataclass(frozen=True)
class FrameSequence:
    """N consecutive yearly frames of one tile plus a later year's built target."""

    tile_id: int
    input_frames: tuple[RasterGrid, ...]
    input_years: tuple[int, ...]
    target_year: int
    target_value: float
    horizon: int

    def __post_init__(self):
        years = tuple(int(y) for y in self.input_years)
        if len(self.input_frames) != len(years) or not years:
            raise ValidationError("frames and years must align and be non-empty")
        if any(b - a != 1 for a, b in zip(years, years[1:])):
            raise ValidationError(f"input years must be consecutive, got {years}")
        if self.horizon != self.target_year - years[-1] or self.horizon < 1:
            raise ValidationError(
                f"horizon {self.horizon} does not match years {years} -> {self.target_year}"
            )
        if not 0.0 <= self.target_value <= 1.0:
            raise ValidationError(f"target_value out of [0, 1]: {self.target_value}")
        object.__setattr__(self, "input_years", years)
        object.__setattr__(self, "input_frames", tuple(self.input_frames))


@dataclass(frozen=True)
class SequenceKey:
    """A sequence's identity without its frames: which tile, which years."""

    tile_id: int
    input_years: tuple[int, ...]
    target_year: int
    target_value: float
    horizon: int


def sequence_index(
    table: TileMetricsTable,
    n: int = DEFAULT_WINDOW,
    horizon: int = 1,
    valid_threshold: float = DEFAULT_VALID_THRESHOLD,
) -> list[SequenceKey]:
    """Sliding-window candidates for every tile with enough consecutive years.

    Windows whose input years include a row under the valid-fraction
    threshold are dropped; too few years yields an empty list, not an
    error.
    """
    if n < 1 or horizon < 1:
        raise ValidationError(f"window {n} and horizon {horizon} must be >= 1")
    years = table.years()
    keys: list[SequenceKey] = []
    for tile_id in table.tile_ids():
        for start in range(max(0, len(years) - n + 1)):
            window_years = years[start : start + n]
            if len(window_years) < n:
                continue
            target_year = window_years[-1] + horizon
            # the year list must be gap-free for this window and target
            if any(b - a != 1 for a, b in zip(window_years, window_years[1:])):
                continue
            if target_year not in years:
                continue
            rows = [table.get(tile_id, y) for y in window_years]
            target_row = table.get(tile_id, target_year)
            if any(r is None for r in rows) or target_row is None:
                continue
            if any(r.valid_fraction < valid_threshold for r in rows):
                continue
            keys.append(
                SequenceKey(
                    tile_id=tile_id,
                    input_years=tuple(window_years),
                    target_year=target_year,
                    target_value=target_row.built,
                    horizon=horizon,
                )
            )
    return keys


def attach_frames(keys, rasters) -> list[FrameSequence]:
    """Materialize sequences by pairing index entries with their tile frames."""
    sequences = []
    for key in keys:
        frames = []
        for y in key.input_years:
            frame = rasters.get((key.tile_id, y))
            if frame is None:
                raise DataUnavailableError(f"missing frame for tile {key.tile_id}, year {y}")
            frames.append(frame)
        sequences.append(
            FrameSequence(
                tile_id=key.tile_id,
                input_frames=tuple(frames),
                input_years=key.input_years,
                target_year=key.target_year,
                target_value=key.target_value,
                horizon=key.horizon,
            )
        )
    return sequences


def build_sequences(
    rasters,
    table: TileMetricsTable,
    n: int = DEFAULT_WINDOW,
    horizon: int = 1,
    valid_threshold: float = DEFAULT_VALID_THRESHOLD,
) -> list[FrameSequence]:
    """Sliding-window sequences with frames attached; see sequence_index."""
    return attach_frames(sequence_index(table, n, horizon, valid_threshold), rasters)


def write_table_csv(table: TileMetricsTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_CSV_HEADER.split(","))
        for row in table.rows():
            writer.writerow(
                [row.tile_id, row.year, *[repr(p) for p in row.proportions], repr(row.valid_fraction)]
            )


def read_table_csv(path) -> TileMetricsTable:
    table = TileMetricsTable()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TABLE_CSV_HEADER.split(","):
            raise FormatError(f"unexpected table header {header!r}", offset=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 12:
                raise FormatError(f"expected 12 columns, got {len(row)}", offset=lineno)
            try:
                parsed = TileMetricsRow(
                    tile_id=int(row[0]),
                    year=int(row[1]),
                    proportions=tuple(float(v) for v in row[2:11]),
                    valid_fraction=float(row[11]),
                )
                table.add(parsed)
            except (ValueError, ValidationError) as exc:
                raise FormatError(f"bad table row: {exc}", offset=lineno) from exc
    return table
