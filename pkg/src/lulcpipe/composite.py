"""Temporal compositing: seasonal filtering, aggregation, and gap imputation.

A year's image collection is reduced to a single composite by per-pixel
aggregation over the summer window; pixels still missing afterwards
(clouds covering every summer pass) are imputed from a composite over
the full year. Winter imagery therefore never leaks into the output
unless a pixel had no summer observation at all.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataUnavailableError, FormatError, ValidationError
from .raster import DTYPE_F32, DTYPE_U8, LABEL_NODATA, RasterGrid, label_raster, prob_raster

AGGREGATION_OPS = ("mean", "median", "min", "max", "mode")

# mean needs real arithmetic; mode needs a finite class alphabet
_OPS_FOR_DTYPE = {
    DTYPE_U8: ("median", "min", "max", "mode"),
    DTYPE_F32: ("mean", "median", "min", "max"),
}

REPORT_CSV_HEADER = "batch_id,year,pixels_total,missing_before,missing_after,imputed_count,fallback_only"


@dataclass(frozen=True)
class SeasonalWindow:
    """Month-day interval within a calendar year, inclusive start, exclusive end."""

    start_month_day: tuple[int, int]
    end_month_day: tuple[int, int]

    def __post_init__(self):
        for md in (self.start_month_day, self.end_month_day):
            month, day = md
            if not (1 <= month <= 12 and 1 <= day <= 31):
                raise ValidationError(f"bad month-day {md}")
        if not self.start_month_day < self.end_month_day:
            raise ValidationError(
                f"window start {self.start_month_day} must precede end {self.end_month_day}"
            )
        object.__setattr__(self, "start_month_day", tuple(self.start_month_day))
        object.__setattr__(self, "end_month_day", tuple(self.end_month_day))

    @classmethod
    def from_month_days(cls, start: str, end: str) -> "SeasonalWindow":
        """Parse "MM-DD" strings."""

        def parse(text):
            parts = text.split("-")
            if len(parts) != 2:
                raise ValidationError(f"expected MM-DD, got {text!r}")
            return int(parts[0]), int(parts[1])

        return cls(parse(start), parse(end))

    @classmethod
    def from_dates(cls, start: str, end: str) -> "SeasonalWindow":
        """Parse full "YYYY-MM-DD" strings, keeping only the month-day parts."""
        try:
            s = datetime.date.fromisoformat(start)
            e = datetime.date.fromisoformat(end)
        except ValueError as exc:
            raise ValidationError(f"bad date: {exc}") from exc
        return cls((s.month, s.day), (e.month, e.day))

    def contains(self, ts: datetime.date) -> bool:
        return self.start_month_day <= (ts.month, ts.day) < self.end_month_day


SUMMER_WINDOW = SeasonalWindow((6, 1), (10, 1))


@dataclass(frozen=True)
class ImageCollection:
    """Timestamped rasters of identical shape, bands, dtype, and placement."""

    items: tuple[tuple[datetime.date, RasterGrid], ...]

    def __post_init__(self):
        items = tuple((ts, r) for ts, r in self.items)
        for ts, r in items:
            if not isinstance(ts, datetime.date):
                raise ValidationError(f"timestamp must be a date, got {type(ts).__name__}")
        if items:
            first = items[0][1]
            for _, r in items[1:]:
                if (r.width, r.height, r.bands, r.dtype, r.geotransform) != (
                    first.width, first.height, first.bands, first.dtype, first.geotransform
                ):
                    raise ValidationError("collection rasters are not homogeneous")
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass(frozen=True)
class CompositeReport:
    pixels_total: int
    missing_before: int
    missing_after: int
    imputed_count: int
    fallback_only: bool = False
    batch_id: int | None = None
    year: int | None = None

    def __post_init__(self):
        if self.missing_after != self.missing_before - self.imputed_count:
            raise ValidationError("report counts are inconsistent")
        if min(self.pixels_total, self.missing_before, self.missing_after, self.imputed_count) < 0:
            raise ValidationError("report counts must be >= 0")


def filter_season(c: ImageCollection, w: SeasonalWindow) -> ImageCollection:
    return ImageCollection(tuple(item for item in c if w.contains(item[0])))


def _check_op(op: str, dtype: str):
    if op not in AGGREGATION_OPS:
        raise ValidationError(f"unknown aggregation op {op!r}")
    if op not in _OPS_FOR_DTYPE[dtype]:
        raise ValidationError(f"op {op!r} is not defined for {dtype} rasters")


def _aggregate_u8(stack: np.ndarray, op: str) -> np.ndarray:
    valid = stack != LABEL_NODATA
    count = valid.sum(axis=0)
    if op == "mode":
        # per-class vote counts; argmax returns the lowest class on ties
        votes = np.stack([(stack == k).sum(axis=0) for k in range(9)])
        out = np.argmax(votes, axis=0).astype(np.uint8)
    elif op == "min":
        out = stack.min(axis=0)  # nodata (255) never wins unless alone
    elif op == "max":
        out = np.where(valid, stack, 0).max(axis=0)
    else:  # median, lower middle keeps the value in the label alphabet
        ordered = np.sort(stack, axis=0)  # nodata sorts last
        idx = np.maximum(count - 1, 0) // 2
        out = np.take_along_axis(ordered, idx[None, ...], axis=0)[0]
    return np.where(count > 0, out, LABEL_NODATA).astype(np.uint8)


def _aggregate_f32(stack: np.ndarray, op: str) -> np.ndarray:
    valid = ~np.isnan(stack)
    count = valid.sum(axis=0)
    if op == "mean":
        # accumulate in f64 so ordering effects stay far below 1e-6
        total = np.nansum(stack, axis=0, dtype=np.float64)
        out = total / np.maximum(count, 1)
    elif op == "min":
        out = np.where(valid, stack, np.inf).min(axis=0)
    elif op == "max":
        out = np.where(valid, stack, -np.inf).max(axis=0)
    else:  # median, arithmetic midpoint for even counts
        ordered = np.sort(stack, axis=0)  # NaN sorts last
        lo = np.maximum(count - 1, 0) // 2
        hi = np.maximum(count, 1) // 2
        a = np.take_along_axis(ordered, lo[None, ...], axis=0)[0].astype(np.float64)
        b = np.take_along_axis(ordered, hi[None, ...], axis=0)[0].astype(np.float64)
        out = (a + b) / 2.0
    return np.where(count > 0, out, np.nan).astype(np.float32)


def aggregate(c: ImageCollection, op: str) -> RasterGrid:
    """Per-pixel, per-band reduction over the collection's valid values."""
    if len(c) == 0:
        raise ValidationError("cannot aggregate an empty collection")
    first = c.items[0][1]
    _check_op(op, first.dtype)
    stack = np.stack([r.data for _, r in c])
    if first.dtype == DTYPE_U8:
        out = _aggregate_u8(stack, op)
        return label_raster(out, first.geotransform)
    out = _aggregate_f32(stack, op)
    return prob_raster(out, first.geotransform)


def impute(target: RasterGrid, fallback: RasterGrid) -> tuple[RasterGrid, CompositeReport]:
    """Fill target's missing pixels from fallback; valid pixels pass through untouched."""
    if (target.width, target.height, target.bands, target.dtype, target.geotransform) != (
        fallback.width, fallback.height, fallback.bands, fallback.dtype, fallback.geotransform
    ):
        raise ValidationError("target and fallback rasters are not aligned")
    t_valid = target.valid_mask()
    f_valid = fallback.valid_mask()
    out = np.where(t_valid, target.data, fallback.data)
    missing_before = int((~t_valid).sum())
    imputed = int((~t_valid & f_valid).sum())
    report = CompositeReport(
        pixels_total=int(target.data.size),
        missing_before=missing_before,
        missing_after=missing_before - imputed,
        imputed_count=imputed,
    )
    return replace(target, data=out), report


def correct_year(
    seasonal: ImageCollection,
    annual: ImageCollection,
    op: str,
    w: SeasonalWindow,
) -> tuple[RasterGrid, CompositeReport]:
    """Seasonal composite with annual-composite imputation.

    Falls back to the annual composite wholesale (flagged in the report)
    when the season filter leaves nothing to aggregate.
    """
    in_season = filter_season(seasonal, w)
    if len(in_season) == 0 and len(annual) == 0:
        raise DataUnavailableError("no imagery available for this batch/year")
    if len(in_season) == 0:
        fb = aggregate(annual, op)
        blank = np.full_like(fb.data, LABEL_NODATA if fb.dtype == DTYPE_U8 else np.nan)
        out, report = impute(replace(fb, data=blank), fb)
        return out, replace(report, fallback_only=True)
    target = aggregate(in_season, op)
    if len(annual) == 0:
        _, report = impute(target, target)
        return target, replace(report, imputed_count=0, missing_after=report.missing_before)
    out, report = impute(target, aggregate(annual, op))
    return out, report


def write_reports_csv(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_CSV_HEADER.split(","))
        for r in reports:
            if r.batch_id is None or r.year is None:
                raise ValidationError("report rows need batch_id and year to be serialized")
            writer.writerow(
                [
                    r.batch_id,
                    r.year,
                    r.pixels_total,
                    r.missing_before,
                    r.missing_after,
                    r.imputed_count,
                    int(r.fallback_only),
                ]
            )


def read_reports_csv(path) -> list[CompositeReport]:
    reports = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REPORT_CSV_HEADER.split(","):
            raise FormatError(f"unexpected report header {header!r}", offset=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                reports.append(
                    CompositeReport(
                        batch_id=int(row[0]),
                        year=int(row[1]),
                        pixels_total=int(row[2]),
                        missing_before=int(row[3]),
                        missing_after=int(row[4]),
                        imputed_count=int(row[5]),
                        fallback_only=bool(int(row[6])),
                    )
                )
            except (IndexError, ValueError, ValidationError) as exc:
                raise FormatError(f"bad report row: {exc}", offset=lineno) from exc
    return reports
