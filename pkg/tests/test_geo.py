import json
import math

import numpy as np
import pytest

from lulcpipe.errors import DegenerateLatitudeError, FormatError, ValidationError
from lulcpipe.geo import (
    EARTH_RADIUS_M,
    BoundaryPolygon,
    FishnetGrid,
    GeoBoundingBox,
    GeoPoint,
    filter_by_polygon,
    generate_fishnet,
    grid_from_json,
    grid_to_json,
    haversine_distance,
    lat_step_degrees,
    load_grid,
    locate,
    lon_step_degrees,
    save_grid,
)

# shave a hair off constructed spans so ceil() does not flip on float roundoff
MARGIN = 1.0 - 1e-12


def exact_grid_bbox(min_lat, min_lon, tile_size_m, nx, ny):
    """Bbox spanning almost exactly nx x ny tiles, anchored at its SW corner."""
    dlat = ny * lat_step_degrees(tile_size_m) * MARGIN
    # width is measured at the latitude closest to the equator; for a
    # northern-hemisphere box that is min_lat
    half = math.sin(nx * tile_size_m * MARGIN / (2.0 * EARTH_RADIUS_M))
    dlon = 2.0 * math.degrees(math.asin(half / math.cos(math.radians(min_lat))))
    return GeoBoundingBox(min_lat, min_lon, min_lat + dlat, min_lon + dlon)


def test_haversine_identity_and_symmetry():
    p = GeoPoint(10.0, 20.0)
    assert haversine_distance(p, p) == 0.0
    a = GeoPoint(33.0, -97.5)
    b = GeoPoint(31.25, -101.0)
    assert haversine_distance(a, b) == haversine_distance(b, a)


def test_haversine_antipodal():
    d = haversine_distance(GeoPoint(0.0, 0.0), GeoPoint(0.0, -180.0))
    assert d == pytest.approx(math.pi * EARTH_RADIUS_M, rel=1e-12)


def test_haversine_one_degree_equator():
    d = haversine_distance(GeoPoint(0.0, 0.0), GeoPoint(0.0, 1.0))
    assert d == pytest.approx(EARTH_RADIUS_M * math.pi / 180.0, rel=1e-12)
    assert 111_000.0 < d < 111_400.0


def test_haversine_triangle_inequality():
    rng = np.random.default_rng(11)
    for _ in range(200):
        lats = rng.uniform(-80, 80, size=3)
        lons = rng.uniform(-170, 170, size=3)
        a, b, c = (GeoPoint(float(lat), float(lon)) for lat, lon in zip(lats, lons))
        assert haversine_distance(a, c) <= (
            haversine_distance(a, b) + haversine_distance(b, c) + 1e-6
        )


def test_haversine_rejects_bad_radius():
    with pytest.raises(ValidationError):
        haversine_distance(GeoPoint(0, 0), GeoPoint(1, 1), radius_m=0.0)


def test_point_validation():
    with pytest.raises(ValidationError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValidationError):
        GeoPoint(0.0, 180.0)
    with pytest.raises(ValidationError):
        GeoPoint(float("nan"), 0.0)


def test_bbox_validation():
    with pytest.raises(ValidationError):
        GeoBoundingBox(10.0, 0.0, 10.0, 1.0)
    with pytest.raises(ValidationError):
        GeoBoundingBox(0.0, 5.0, 1.0, 5.0)


def test_lat_step_one_degree():
    size = EARTH_RADIUS_M * math.pi / 180.0
    assert lat_step_degrees(size) == pytest.approx(1.0, rel=1e-12)


def test_lon_step_equator_equals_lat_step():
    assert lon_step_degrees(400.0, 0.0) == lat_step_degrees(400.0)


def test_lon_step_sixty_degrees_doubles():
    assert lon_step_degrees(400.0, 60.0) == pytest.approx(2.0 * lon_step_degrees(400.0, 0.0), rel=1e-12)


def test_lon_step_degenerate_at_pole():
    with pytest.raises(DegenerateLatitudeError):
        lon_step_degrees(400.0, 90.0)
    with pytest.raises(DegenerateLatitudeError):
        lon_step_degrees(400.0, -90.0)


def test_generate_fishnet_two_by_two():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=2, ny=2)
    grid = generate_fishnet(bbox, 400.0)
    assert (grid.num_tiles_x, grid.num_tiles_y) == (2, 2)
    assert grid.num_tiles == 4


def test_generate_fishnet_single_tile():
    bbox = exact_grid_bbox(40.0, -100.0, 4000.0, nx=1, ny=1)
    grid = generate_fishnet(bbox, 40_000.0)
    assert (grid.num_tiles_x, grid.num_tiles_y) == (1, 1)


def test_tile_ids_and_bboxes():
    bbox = exact_grid_bbox(35.0, 10.0, 500.0, nx=3, ny=2)
    grid = generate_fishnet(bbox, 500.0)
    assert grid.tile(2, 1).tile_id == 1 * 3 + 2
    t = grid.tile_by_id(5)
    assert (t.i, t.j) == (2, 1)
    # shared edges are exact: east of (0, j) == west of (1, j)
    for j in range(2):
        left = grid.tile_bbox(0, j)
        right = grid.tile_bbox(1, j)
        assert left.max_lon == right.min_lon
        assert left.min_lat == grid.tile_bbox(0, j).min_lat
    top = grid.tile_bbox(0, 0)
    below = grid.tile_bbox(0, 1)
    assert top.min_lat == below.max_lat
    with pytest.raises(ValidationError):
        grid.tile(3, 0)
    with pytest.raises(ValidationError):
        grid.tile_by_id(6)


def test_tile_width_near_tile_size():
    bbox = exact_grid_bbox(60.0, -30.0, 400.0, nx=5, ny=5)
    grid = generate_fishnet(bbox, 400.0)
    for j in range(grid.num_tiles_y):
        b = grid.tile_bbox(2, j)
        width = haversine_distance(GeoPoint(b.max_lat, b.min_lon), GeoPoint(b.max_lat, b.max_lon))
        assert width == pytest.approx(400.0, rel=5e-3)


def test_rows_cover_bbox_width():
    bbox = exact_grid_bbox(28.0, -100.0, 400.0, nx=50, ny=40)
    grid = generate_fishnet(bbox, 400.0)
    span = bbox.max_lon - bbox.min_lon
    for j in range(grid.num_tiles_y):
        assert grid.num_tiles_x * grid.lon_step_for_row(j) >= span
    assert grid.bbox.max_lat - grid.num_tiles_y * grid.lat_step <= bbox.min_lat


def test_locate_center_of_first_tile():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=4, ny=4)
    grid = generate_fishnet(bbox, 400.0)
    b = grid.tile_bbox(0, 0)
    center = GeoPoint((b.min_lat + b.max_lat) / 2.0, (b.min_lon + b.max_lon) / 2.0)
    assert locate(grid, center).tile_id == 0


def test_locate_outside_is_none():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=4, ny=4)
    grid = generate_fishnet(bbox, 400.0)
    assert locate(grid, GeoPoint(50.0, -100.0)) is None
    assert locate(grid, GeoPoint(40.001, -120.0)) is None


def test_locate_shared_edge_belongs_to_eastern_tile():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=4, ny=4)
    grid = generate_fishnet(bbox, 400.0)
    edge_lon = grid.bbox.min_lon + grid.lon_step_for_row(0)
    b0 = grid.tile_bbox(0, 0)
    lat_inside = (b0.min_lat + b0.max_lat) / 2.0
    t = locate(grid, GeoPoint(lat_inside, edge_lon))
    assert (t.i, t.j) == (1, 0)


def test_locate_containment_randomized():
    bbox = exact_grid_bbox(31.0, -104.0, 400.0, nx=30, ny=25)
    grid = generate_fishnet(bbox, 400.0)
    rng = np.random.default_rng(3)
    for _ in range(500):
        p = GeoPoint(
            float(rng.uniform(bbox.min_lat, bbox.max_lat)),
            float(rng.uniform(bbox.min_lon, bbox.max_lon)),
        )
        t = locate(grid, p)
        assert t is not None
        assert t.bbox.min_lat <= p.lat < t.bbox.max_lat
        assert t.bbox.min_lon <= p.lon < t.bbox.max_lon


def _closed_ring(points):
    return tuple(GeoPoint(lat, lon) for lat, lon in points + [points[0]])


def test_polygon_validation():
    with pytest.raises(ValidationError):
        BoundaryPolygon((GeoPoint(0, 0), GeoPoint(1, 0), GeoPoint(1, 1)))
    with pytest.raises(ValidationError):
        BoundaryPolygon((GeoPoint(0, 0), GeoPoint(1, 0), GeoPoint(1, 1), GeoPoint(0, 1)))
    # bowtie self-intersection
    with pytest.raises(ValidationError):
        BoundaryPolygon(_closed_ring([(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]))


def test_filter_by_polygon_full_bbox_keeps_all():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=2, ny=2)
    grid = generate_fishnet(bbox, 400.0)
    ring = _closed_ring(
        [
            (bbox.min_lat, bbox.min_lon),
            (bbox.min_lat, bbox.max_lon),
            (bbox.max_lat, bbox.max_lon),
            (bbox.max_lat, bbox.min_lon),
        ]
    )
    out = filter_by_polygon(grid, BoundaryPolygon(ring))
    assert out.mask.all()


def test_filter_by_polygon_left_half():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=2, ny=2)
    grid = generate_fishnet(bbox, 400.0)
    mid_lon = grid.bbox.min_lon + grid.lon_step_for_row(1)  # widest row's first column
    ring = _closed_ring(
        [
            (bbox.min_lat - 1.0, bbox.min_lon - 1.0),
            (bbox.min_lat - 1.0, mid_lon),
            (bbox.max_lat + 1.0, mid_lon),
            (bbox.max_lat + 1.0, bbox.min_lon - 1.0),
        ]
    )
    out = filter_by_polygon(grid, BoundaryPolygon(ring))
    assert out.mask[:, 0].all()
    assert not out.mask[:, 1].any()
    assert locate(out, GeoPoint(40.0001, bbox.max_lon - 1e-5)) is None


def test_filter_by_polygon_sliver_keeps_none():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=2, ny=2)
    grid = generate_fishnet(bbox, 400.0)
    ring = _closed_ring(
        [
            (bbox.min_lat, bbox.min_lon),
            (bbox.min_lat + 1e-9, bbox.min_lon),
            (bbox.min_lat + 1e-9, bbox.min_lon + 1e-9),
        ]
    )
    out = filter_by_polygon(grid, BoundaryPolygon(ring))
    assert not out.mask.any()


def test_grid_json_round_trip():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=5, ny=3)
    grid = generate_fishnet(bbox, 400.0)
    assert grid_from_json(grid_to_json(grid)) == grid


def test_grid_json_round_trip_with_mask():
    rng = np.random.default_rng(9)
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=7, ny=4)
    base = generate_fishnet(bbox, 400.0)
    for _ in range(20):
        mask = rng.random((4, 7)) < rng.uniform(0.0, 1.0)
        grid = FishnetGrid(
            bbox=base.bbox,
            tile_size_m=base.tile_size_m,
            num_tiles_x=base.num_tiles_x,
            num_tiles_y=base.num_tiles_y,
            mask=mask,
        )
        doc = grid_to_json(grid)
        assert grid_from_json(json.loads(json.dumps(doc))) == grid


def test_grid_json_rejects_stale_counts():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=5, ny=3)
    doc = grid_to_json(generate_fishnet(bbox, 400.0))
    doc["num_tiles_x"] = 6
    with pytest.raises(FormatError):
        grid_from_json(doc)


def test_grid_json_rejects_bad_mask_length():
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=5, ny=3)
    doc = grid_to_json(generate_fishnet(bbox, 400.0))
    doc["mask"] = [4]
    with pytest.raises(FormatError):
        grid_from_json(doc)


def test_grid_file_round_trip(tmp_path):
    bbox = exact_grid_bbox(40.0, -100.0, 400.0, nx=5, ny=3)
    grid = generate_fishnet(bbox, 400.0)
    path = tmp_path / "grid.json"
    save_grid(grid, path)
    assert load_grid(path) == grid
    path.write_text("{ not json")
    with pytest.raises(FormatError):
        load_grid(path)
