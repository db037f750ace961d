import json

import numpy as np
import pytest

from lulcpipe.batching import (
    BatchPlan,
    PixelWindow,
    batch_by_id,
    batch_of_tile,
    batch_raster_size,
    batch_ref,
    iter_batches,
    manifest_dict,
    plan_batches,
    read_manifest,
    tile_pixel_window,
    tile_pixels,
    write_manifest,
)
from lulcpipe.composite import SUMMER_WINDOW
from lulcpipe.errors import FormatError, ValidationError
from lulcpipe.geo import generate_fishnet

from test_geo import exact_grid_bbox


def make_grid(nx, ny, tile_size_m=400.0, min_lat=31.0, min_lon=-104.0):
    bbox = exact_grid_bbox(min_lat, min_lon, tile_size_m, nx=nx, ny=ny)
    return generate_fishnet(bbox, tile_size_m)


def test_tile_pixels_exact():
    assert tile_pixels(400.0, 10.0) == 40
    assert tile_pixels(400.0, 400.0) == 1


def test_tile_pixels_rejects_misaligned():
    with pytest.raises(ValidationError):
        tile_pixels(400.0, 7.0)


def test_plan_batches_floor_and_ceil():
    grid = make_grid(3, 3)
    plan = plan_batches(grid, 900.0, resolution_m=10.0)
    assert plan.tiles_per_batch_x == 2
    assert plan.tiles_per_batch_y == 2
    assert plan.num_batches_x == 2
    assert plan.num_batches_y == 2
    assert plan.num_batches == 4
    assert plan.tile_px == 40


def test_plan_batches_batch_equals_tile():
    grid = make_grid(3, 2)
    plan = plan_batches(grid, 400.0)
    assert plan.num_batches == grid.num_tiles


def test_plan_batches_rejects_small_batch():
    grid = make_grid(2, 2)
    with pytest.raises(ValidationError):
        plan_batches(grid, 399.0)


def test_batch_ref_edges():
    grid = make_grid(3, 3)
    plan = plan_batches(grid, 900.0)
    full = batch_ref(plan, 0, 0)
    assert (full.tiles_x, full.tiles_y) == (2, 2)
    edge = batch_ref(plan, 1, 1)
    assert (edge.tiles_x, edge.tiles_y) == (1, 1)
    assert edge.i0 == 2 and edge.i1 == 2
    with pytest.raises(ValidationError):
        batch_ref(plan, 2, 0)


def test_batch_ids_row_major():
    grid = make_grid(5, 3)
    plan = plan_batches(grid, 800.0)
    ids = [b.batch_id for b in iter_batches(plan)]
    assert ids == list(range(plan.num_batches))
    b = batch_by_id(plan, plan.num_batches - 1)
    assert (b.bi, b.bj) == (plan.num_batches_x - 1, plan.num_batches_y - 1)
    with pytest.raises(ValidationError):
        batch_by_id(plan, plan.num_batches)


def test_batch_bbox_covers_member_tiles():
    grid = make_grid(5, 4)
    plan = plan_batches(grid, 1200.0)
    for batch in iter_batches(plan):
        for j in range(batch.j0, batch.j1 + 1):
            for i in range(batch.i0, batch.i1 + 1):
                t = grid.tile_bbox(i, j)
                assert batch.bbox.min_lat <= t.min_lat
                assert batch.bbox.max_lat >= t.max_lat
                assert batch.bbox.min_lon <= t.min_lon
                assert batch.bbox.max_lon >= t.max_lon


def test_batch_of_tile_partition():
    grid = make_grid(5, 3)
    plan = plan_batches(grid, 800.0)
    counts = {b.batch_id: 0 for b in iter_batches(plan)}
    for tile in grid.iter_tiles():
        counts[batch_of_tile(plan, tile).batch_id] += 1
    assert sum(counts.values()) == grid.num_tiles
    assert counts[0] == plan.tiles_per_batch_x * plan.tiles_per_batch_y


def test_batch_of_tile_rejects_foreign_tile():
    plan = plan_batches(make_grid(3, 3), 800.0)
    other = make_grid(4, 4)
    with pytest.raises(ValidationError):
        batch_of_tile(plan, other.tile(3, 3))


def test_tile_pixel_window_layout():
    grid = make_grid(3, 3)
    plan = plan_batches(grid, 900.0)
    batch = batch_ref(plan, 0, 0)
    assert batch_raster_size(plan, batch) == (80, 80)
    w00 = tile_pixel_window(plan, batch, grid.tile(0, 0))
    assert (w00.x0, w00.y0, w00.width, w00.height) == (0, 0, 40, 40)
    w10 = tile_pixel_window(plan, batch, grid.tile(1, 0))
    assert (w10.x0, w10.y0) == (40, 0)
    w01 = tile_pixel_window(plan, batch, grid.tile(0, 1))
    assert (w01.x0, w01.y0) == (0, 40)
    with pytest.raises(ValidationError):
        tile_pixel_window(plan, batch, grid.tile(2, 2))


def test_tile_windows_tile_the_batch_raster():
    grid = make_grid(5, 4)
    plan = plan_batches(grid, 1200.0)
    for batch in iter_batches(plan):
        width, height = batch_raster_size(plan, batch)
        cover = np.zeros((height, width), dtype=np.int32)
        for j in range(batch.j0, batch.j1 + 1):
            for i in range(batch.i0, batch.i1 + 1):
                w = tile_pixel_window(plan, batch, grid.tile(i, j))
                cover[w.y0 : w.y0 + w.height, w.x0 : w.x0 + w.width] += 1
        assert (cover == 1).all()


def test_pixel_window_validation():
    with pytest.raises(ValidationError):
        PixelWindow(0, 0, 0, 4)
    with pytest.raises(ValidationError):
        PixelWindow(-1, 0, 4, 4)


def test_manifest_schema():
    grid = make_grid(3, 3)
    plan = plan_batches(grid, 900.0)
    doc = manifest_dict(plan, [2016, 2017], SUMMER_WINDOW)
    assert doc["version"] == 1
    assert set(doc) == {
        "version",
        "tile_size_m",
        "batch_size_m",
        "resolution_m",
        "grid",
        "seasons",
        "bands",
        "batches",
    }
    assert doc["seasons"][0] == {"year": 2016, "start": "2016-06-01", "end": "2016-10-01"}
    assert doc["bands"][0] == "water"
    assert doc["bands"][-1] == "label"
    assert len(doc["bands"]) == 10
    assert len(doc["batches"]) == 4
    first = doc["batches"][0]
    assert set(first) == {"batch_id", "bbox", "width_px", "height_px"}
    assert first["batch_id"] == 0
    assert first["width_px"] == 80 and first["height_px"] == 80
    b = batch_by_id(plan, 0).bbox
    assert first["bbox"] == [b.min_lat, b.min_lon, b.max_lat, b.max_lon]


def test_manifest_rejects_bad_years():
    plan = plan_batches(make_grid(2, 2), 800.0)
    with pytest.raises(ValidationError):
        manifest_dict(plan, [], SUMMER_WINDOW)
    with pytest.raises(ValidationError):
        manifest_dict(plan, [2017, 2016], SUMMER_WINDOW)
    with pytest.raises(ValidationError):
        manifest_dict(plan, [2016, 2016], SUMMER_WINDOW)


def test_manifest_file_round_trip(tmp_path):
    grid = make_grid(3, 2)
    plan = plan_batches(grid, 800.0)
    path = tmp_path / "manifest.json"
    write_manifest(plan, [2016, 2017, 2018], SUMMER_WINDOW, path)
    loaded_plan, years, season = read_manifest(path)
    assert years == [2016, 2017, 2018]
    assert season == SUMMER_WINDOW
    assert loaded_plan.grid == grid
    assert loaded_plan.batch_size_m == plan.batch_size_m
    assert loaded_plan.resolution_m == plan.resolution_m
    assert isinstance(loaded_plan, BatchPlan)


def test_manifest_rejects_tampering(tmp_path):
    plan = plan_batches(make_grid(3, 2), 800.0)
    path = tmp_path / "manifest.json"
    write_manifest(plan, [2016], SUMMER_WINDOW, path)
    doc = json.loads(path.read_text())

    doc["batches"][0]["width_px"] = 9999
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        read_manifest(path)

    doc["batches"][0]["width_px"] = 80
    doc["version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        read_manifest(path)
