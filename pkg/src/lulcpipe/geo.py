"""Fishnet grid generation and spherical geometry helpers.

A fishnet partitions a geographic bounding box into fixed-size square
tiles. Tiles are never materialized: the grid stores only its bounding
box, tile size, and tile counts, and any tile's bounding box is computed
on demand from its (column, row) indices. Row 0 sits at the northern
edge; latitude steps are constant while longitude steps are recomputed
per row at that row's top latitude, which keeps tile widths close to the
nominal size across the latitude span.

Tile edges are half-open, [west, east) x [south, north), so every point
belongs to at most one tile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLatitudeError, FormatError, ValidationError

EARTH_RADIUS_M = 6_371_000.0

_DEG_PER_RAD = 180.0 / math.pi


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        lat = _check_finite("lat", self.lat)
        lon = _check_finite("lon", self.lon)
        if not -90.0 <= lat <= 90.0:
            raise ValidationError(f"lat out of range [-90, 90]: {lat}")
        if not -180.0 <= lon < 180.0:
            raise ValidationError(f"lon out of range [-180, 180): {lon}")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class GeoBoundingBox:
    """Axis-aligned box in degrees. Does not support antimeridian crossing."""

    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self):
        for name in ("min_lat", "min_lon", "max_lat", "max_lon"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        if not (-90.0 <= self.min_lat and self.max_lat <= 90.0):
            raise ValidationError(f"latitudes out of range: {self}")
        if not (-180.0 <= self.min_lon and self.max_lon <= 180.0):
            raise ValidationError(f"longitudes out of range: {self}")
        if not self.min_lat < self.max_lat:
            raise ValidationError(f"degenerate bbox: min_lat {self.min_lat} >= max_lat {self.max_lat}")
        if not self.min_lon < self.max_lon:
            raise ValidationError(f"degenerate bbox: min_lon {self.min_lon} >= max_lon {self.max_lon}")

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lat <= p.lat <= self.max_lat and self.min_lon <= p.lon <= self.max_lon

    def as_list(self) -> list[float]:
        return [self.min_lat, self.min_lon, self.max_lat, self.max_lon]


def haversine_distance(p1: GeoPoint, p2: GeoPoint, radius_m: float = EARTH_RADIUS_M) -> float:
    """Great-circle distance in meters between two points.

    Uses the haversine formula on a sphere of the given radius, a good
    approximation for tiling work at these scales.
    """
    radius_m = _check_finite("radius_m", radius_m)
    if radius_m <= 0:
        raise ValidationError(f"radius_m must be positive, got {radius_m}")
    phi1 = math.radians(p1.lat)
    phi2 = math.radians(p2.lat)
    dphi = math.radians(p2.lat - p1.lat)
    dlmb = math.radians(p2.lon - p1.lon)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    # roundoff can push a a hair past 1 for antipodal points
    a = min(1.0, max(0.0, a))
    return 2.0 * radius_m * math.asin(math.sqrt(a))


def lat_step_degrees(tile_size_m: float, radius_m: float = EARTH_RADIUS_M) -> float:
    """Degrees of latitude spanning ``tile_size_m`` meters along a meridian."""
    tile_size_m = _check_finite("tile_size_m", tile_size_m)
    if tile_size_m <= 0:
        raise ValidationError(f"tile_size_m must be positive, got {tile_size_m}")
    return tile_size_m / (radius_m * math.pi / 180.0)


def lon_step_degrees(tile_size_m: float, at_lat: float, radius_m: float = EARTH_RADIUS_M) -> float:
    """Degrees of longitude spanning ``tile_size_m`` meters along the parallel at ``at_lat``."""
    tile_size_m = _check_finite("tile_size_m", tile_size_m)
    at_lat = _check_finite("at_lat", at_lat)
    if tile_size_m <= 0:
        raise ValidationError(f"tile_size_m must be positive, got {tile_size_m}")
    cos_lat = math.cos(math.radians(at_lat))
    if abs(at_lat) >= 90.0 or cos_lat <= 0.0:
        raise DegenerateLatitudeError(f"longitude step undefined at latitude {at_lat}")
    return tile_size_m / (radius_m * cos_lat * math.pi / 180.0)


@dataclass(frozen=True)
class TileRef:
    """One fishnet cell: (column i, row j) plus its derived id and bounding box."""

    tile_id: int
    i: int
    j: int
    bbox: GeoBoundingBox


@dataclass(frozen=True, eq=False)
class FishnetGrid:
    """Lazily indexed tile partition of a bounding box.

    ``mask``, when present, is a boolean (num_tiles_y, num_tiles_x) array
    marking tiles retained by a polygon filter. Construction cost and
    memory are independent of the tile count (mask excepted).
    """

    bbox: GeoBoundingBox
    tile_size_m: float
    num_tiles_x: int
    num_tiles_y: int
    earth_radius_m: float = EARTH_RADIUS_M
    mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.tile_size_m <= 0:
            raise ValidationError(f"tile_size_m must be positive, got {self.tile_size_m}")
        if self.num_tiles_x < 1 or self.num_tiles_y < 1:
            raise ValidationError(f"tile counts must be >= 1, got {self.num_tiles_x} x {self.num_tiles_y}")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != (self.num_tiles_y, self.num_tiles_x):
                raise ValidationError(
                    f"mask shape {mask.shape} does not match grid {self.num_tiles_y} x {self.num_tiles_x}"
                )
            object.__setattr__(self, "mask", mask)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FishnetGrid):
            return NotImplemented
        if (self.bbox, self.tile_size_m, self.num_tiles_x, self.num_tiles_y, self.earth_radius_m) != (
            other.bbox, other.tile_size_m, other.num_tiles_x, other.num_tiles_y, other.earth_radius_m
        ):
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        return self.mask is None or bool(np.array_equal(self.mask, other.mask))

    @property
    def num_tiles(self) -> int:
        return self.num_tiles_x * self.num_tiles_y

    @property
    def lat_step(self) -> float:
        return lat_step_degrees(self.tile_size_m, self.earth_radius_m)

    def row_top_lat(self, j: int) -> float:
        return self.bbox.max_lat - j * self.lat_step

    def lon_step_for_row(self, j: int) -> float:
        return lon_step_degrees(self.tile_size_m, self.row_top_lat(j), self.earth_radius_m)

    def _check_indices(self, i: int, j: int):
        if not (0 <= i < self.num_tiles_x and 0 <= j < self.num_tiles_y):
            raise ValidationError(f"tile index ({i}, {j}) outside grid {self.num_tiles_x} x {self.num_tiles_y}")

    def tile_bbox(self, i: int, j: int) -> GeoBoundingBox:
        self._check_indices(i, j)
        lat_step = self.lat_step
        north = self.bbox.max_lat - j * lat_step
        south = self.bbox.max_lat - (j + 1) * lat_step
        lon_step = self.lon_step_for_row(j)
        west = self.bbox.min_lon + i * lon_step
        east = self.bbox.min_lon + (i + 1) * lon_step
        return GeoBoundingBox(min_lat=south, min_lon=west, max_lat=north, max_lon=east)

    def tile(self, i: int, j: int) -> TileRef:
        self._check_indices(i, j)
        return TileRef(tile_id=j * self.num_tiles_x + i, i=i, j=j, bbox=self.tile_bbox(i, j))

    def tile_by_id(self, tile_id: int) -> TileRef:
        if not 0 <= tile_id < self.num_tiles:
            raise ValidationError(f"tile_id {tile_id} outside grid with {self.num_tiles} tiles")
        return self.tile(tile_id % self.num_tiles_x, tile_id // self.num_tiles_x)

    def included(self, i: int, j: int) -> bool:
        self._check_indices(i, j)
        return True if self.mask is None else bool(self.mask[j, i])

    def iter_tiles(self):
        """Yield included tiles in tile_id order without materializing them."""
        for j in range(self.num_tiles_y):
            for i in range(self.num_tiles_x):
                if self.included(i, j):
                    yield self.tile(i, j)


def _widest_lat(bbox: GeoBoundingBox) -> float:
    # the latitude in the box closest to the equator, where parallels are longest
    if bbox.min_lat <= 0.0 <= bbox.max_lat:
        return 0.0
    return bbox.min_lat if bbox.min_lat > 0.0 else bbox.max_lat


def bbox_spans_m(bbox: GeoBoundingBox, radius_m: float = EARTH_RADIUS_M) -> tuple[float, float]:
    """(east-west, north-south) haversine spans of a bbox in meters.

    The east-west span is measured along the parallel closest to the
    equator within the box, so a column count derived from it covers
    every row of the resulting grid.
    """
    wide_lat = _widest_lat(bbox)
    width_m = haversine_distance(
        GeoPoint(wide_lat, bbox.min_lon), GeoPoint(wide_lat, bbox.max_lon), radius_m
    )
    height_m = haversine_distance(
        GeoPoint(bbox.min_lat, bbox.min_lon), GeoPoint(bbox.max_lat, bbox.min_lon), radius_m
    )
    return width_m, height_m


def generate_fishnet(
    bbox: GeoBoundingBox, tile_size_m: float, radius_m: float = EARTH_RADIUS_M
) -> FishnetGrid:
    """Partition ``bbox`` into square tiles of ``tile_size_m`` meters per side.

    Tile counts are ceilings of the bbox spans over the tile size, so the
    last row and column may extend past the box.
    """
    tile_size_m = _check_finite("tile_size_m", tile_size_m)
    if tile_size_m <= 0:
        raise ValidationError(f"tile_size_m must be positive, got {tile_size_m}")
    width_m, height_m = bbox_spans_m(bbox, radius_m)
    num_tiles_x = max(1, math.ceil(width_m / tile_size_m))
    num_tiles_y = max(1, math.ceil(height_m / tile_size_m))
    return FishnetGrid(
        bbox=bbox,
        tile_size_m=tile_size_m,
        num_tiles_x=num_tiles_x,
        num_tiles_y=num_tiles_y,
        earth_radius_m=radius_m,
    )


def locate(grid: FishnetGrid, p: GeoPoint) -> TileRef | None:
    """Tile whose half-open bbox contains ``p``, or None if outside or masked out."""
    lat_step = grid.lat_step
    u = (grid.bbox.max_lat - p.lat) / lat_step
    j = None
    for cand in (math.ceil(u) - 1, math.ceil(u), math.ceil(u) - 2):
        if not 0 <= cand < grid.num_tiles_y:
            continue
        north = grid.bbox.max_lat - cand * lat_step
        south = grid.bbox.max_lat - (cand + 1) * lat_step
        if south <= p.lat < north:
            j = cand
            break
    if j is None:
        return None
    lon_step = grid.lon_step_for_row(j)
    v = (p.lon - grid.bbox.min_lon) / lon_step
    for cand in (math.floor(v), math.floor(v) + 1, math.floor(v) - 1):
        if not 0 <= cand < grid.num_tiles_x:
            continue
        west = grid.bbox.min_lon + cand * lon_step
        east = grid.bbox.min_lon + (cand + 1) * lon_step
        if west <= p.lon < east:
            if not grid.included(cand, j):
                return None
            return grid.tile(cand, j)
    return None


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, px, py) -> bool:
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _orient(*p3, *p4, *p1)
    d2 = _orient(*p3, *p4, *p2)
    d3 = _orient(*p1, *p2, *p3)
    d4 = _orient(*p1, *p2, *p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(*p3, *p4, *p1):
        return True
    if d2 == 0 and _on_segment(*p3, *p4, *p2):
        return True
    if d3 == 0 and _on_segment(*p1, *p2, *p3):
        return True
    if d4 == 0 and _on_segment(*p1, *p2, *p4):
        return True
    return False


@dataclass(frozen=True)
class BoundaryPolygon:
    """A single closed, non-self-intersecting polygon ring."""

    ring: tuple[GeoPoint, ...]

    def __post_init__(self):
        ring = tuple(self.ring)
        if len(ring) < 4:
            raise ValidationError(f"polygon ring needs >= 4 points (closed), got {len(ring)}")
        if ring[0] != ring[-1]:
            raise ValidationError("polygon ring must be closed (first point == last point)")
        object.__setattr__(self, "ring", ring)
        self._check_simple()

    def _check_simple(self):
        # pairwise segment test; adjacent segments share an endpoint and are skipped
        pts = [(p.lon, p.lat) for p in self.ring]
        n = len(pts) - 1
        for a in range(n):
            for b in range(a + 1, n):
                adjacent = b == a + 1 or (a == 0 and b == n - 1)
                if adjacent:
                    continue
                if _segments_intersect(pts[a], pts[a + 1], pts[b], pts[b + 1]):
                    raise ValidationError(
                        f"polygon ring self-intersects (segments {a} and {b})"
                    )

    def contains(self, p: GeoPoint) -> bool:
        """Even-odd point-in-polygon test."""
        inside = False
        px, py = p.lon, p.lat
        pts = self.ring
        for k in range(len(pts) - 1):
            x1, y1 = pts[k].lon, pts[k].lat
            x2, y2 = pts[k + 1].lon, pts[k + 1].lat
            if (y1 > py) != (y2 > py):
                x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
                if px < x_cross:
                    inside = not inside
        return inside


def filter_by_polygon(grid: FishnetGrid, poly: BoundaryPolygon) -> FishnetGrid:
    """Grid with mask set: a tile is kept iff its center lies inside the polygon."""
    ny, nx = grid.num_tiles_y, grid.num_tiles_x
    lat_step = grid.lat_step
    tops = grid.bbox.max_lat - np.arange(ny) * lat_step
    center_lat = tops - 0.5 * lat_step  # (ny,)
    lon_steps = np.array([grid.lon_step_for_row(j) for j in range(ny)])  # (ny,)
    center_lon = grid.bbox.min_lon + (np.arange(nx)[None, :] + 0.5) * lon_steps[:, None]  # (ny, nx)
    clat = np.broadcast_to(center_lat[:, None], (ny, nx))

    inside = np.zeros((ny, nx), dtype=bool)
    pts = poly.ring
    for k in range(len(pts) - 1):
        x1, y1 = pts[k].lon, pts[k].lat
        x2, y2 = pts[k + 1].lon, pts[k + 1].lat
        straddles = (y1 > clat) != (y2 > clat)
        if not straddles.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (clat - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (center_lon < x_cross)

    if grid.mask is not None:
        inside &= grid.mask
    return FishnetGrid(
        bbox=grid.bbox,
        tile_size_m=grid.tile_size_m,
        num_tiles_x=grid.num_tiles_x,
        num_tiles_y=grid.num_tiles_y,
        earth_radius_m=grid.earth_radius_m,
        mask=inside,
    )


def _mask_to_rle(mask: np.ndarray) -> list[int]:
    # alternating run lengths in tile_id order; first run counts leading True values
    flat = mask.ravel()
    runs: list[int] = []
    current = True
    count = 0
    for v in flat:
        if bool(v) == current:
            count += 1
        else:
            runs.append(count)
            current = bool(v)
            count = 1
    runs.append(count)
    return runs


def _rle_to_mask(runs: list[int], num_tiles: int, shape: tuple[int, int]) -> np.ndarray:
    flat = np.empty(num_tiles, dtype=bool)
    pos = 0
    value = True
    for run in runs:
        if run < 0 or pos + run > num_tiles:
            raise FormatError(f"mask run-length data inconsistent with {num_tiles} tiles")
        flat[pos : pos + run] = value
        pos += run
        value = not value
    if pos != num_tiles:
        raise FormatError(f"mask run-length data covers {pos} of {num_tiles} tiles")
    return flat.reshape(shape)


def grid_to_json(grid: FishnetGrid) -> dict:
    doc = {
        "bbox": grid.bbox.as_list(),
        "tile_size_m": grid.tile_size_m,
        "num_tiles_x": grid.num_tiles_x,
        "num_tiles_y": grid.num_tiles_y,
        "earth_radius_m": grid.earth_radius_m,
    }
    if grid.mask is not None:
        doc["mask"] = _mask_to_rle(grid.mask)
    return doc


def grid_from_json(doc: dict) -> FishnetGrid:
    try:
        bbox = GeoBoundingBox(*[float(v) for v in doc["bbox"]])
        tile_size_m = float(doc["tile_size_m"])
        num_tiles_x = int(doc["num_tiles_x"])
        num_tiles_y = int(doc["num_tiles_y"])
        earth_radius_m = float(doc["earth_radius_m"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed grid document: {exc}") from exc
    rebuilt = generate_fishnet(bbox, tile_size_m, earth_radius_m)
    if (rebuilt.num_tiles_x, rebuilt.num_tiles_y) != (num_tiles_x, num_tiles_y):
        raise FormatError(
            f"grid document counts {num_tiles_x} x {num_tiles_y} do not match "
            f"recomputed {rebuilt.num_tiles_x} x {rebuilt.num_tiles_y}"
        )
    mask = None
    if "mask" in doc:
        mask = _rle_to_mask(
            [int(v) for v in doc["mask"]], num_tiles_x * num_tiles_y, (num_tiles_y, num_tiles_x)
        )
    return FishnetGrid(
        bbox=bbox,
        tile_size_m=tile_size_m,
        num_tiles_x=num_tiles_x,
        num_tiles_y=num_tiles_y,
        earth_radius_m=earth_radius_m,
        mask=mask,
    )


def save_grid(grid: FishnetGrid, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grid_to_json(grid), fh, indent=2)
        fh.write("\n")


def load_grid(path) -> FishnetGrid:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"grid file is not valid JSON: {exc}", offset=exc.pos) from exc
    return grid_from_json(doc)
