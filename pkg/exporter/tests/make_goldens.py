"""Regenerate the replay fixtures and golden outputs.

Run from the exporter directory:

    python3 tests/make_goldens.py

Requires the lulcpipe package, which acts as the reference LRAS writer here:
matching its bytes is what proves the two implementations agree on the
format. Everything is seeded, so reruns are byte-identical.
"""

import datetime
import math
import pathlib
import sys

import numpy as np
import tifffile

from lulcpipe.batching import batch_by_id, batch_raster_size, plan_batches, write_manifest
from lulcpipe.composite import SUMMER_WINDOW
from lulcpipe.geo import EARTH_RADIUS_M, GeoBoundingBox, generate_fishnet, lat_step_degrees
from lulcpipe.raster import label_raster, prob_raster, write_raster, write_sidecar

HERE = pathlib.Path(__file__).resolve().parent
FIXTURES = HERE / "fixtures"
GOLDENS = HERE / "goldens"

TILE_M = 400.0
YEARS = [2016, 2017]
MASK_FRACTION = 0.01
MARGIN = 1.0 - 1e-12


def exact_grid_bbox(min_lat, min_lon, nx, ny):
    """Bbox spanning almost exactly nx x ny tiles, anchored at its SW corner."""
    dlat = ny * lat_step_degrees(TILE_M) * MARGIN
    half = math.sin(nx * TILE_M * MARGIN / (2.0 * EARTH_RADIUS_M))
    dlon = 2.0 * math.degrees(math.asin(half / math.cos(math.radians(min_lat))))
    return GeoBoundingBox(min_lat, min_lon, min_lat + dlat, min_lon + dlon)


def synth_response(batch_id: int, year: int, height: int, width: int) -> np.ndarray:
    """Ten float32 bands (9 class probabilities + label), ~1% pixels masked."""
    rng = np.random.default_rng([7, batch_id, year])
    probs = rng.random((9, height, width), dtype=np.float32) + 1e-3
    probs /= probs.sum(axis=0, keepdims=True)
    label = np.argmax(probs, axis=0).astype(np.float32)
    data = np.concatenate([probs, label[None]], axis=0).astype(np.float32)
    mask = rng.random((height, width)) < MASK_FRACTION
    data[:, mask] = np.nan
    return data


def geotiff_tags(bbox, height: int, width: int):
    sx = (bbox.max_lon - bbox.min_lon) / width
    sy = (bbox.max_lat - bbox.min_lat) / height
    return [
        (33550, "d", 3, (sx, sy, 0.0)),
        (33922, "d", 6, (0.0, 0.0, 0.0, bbox.min_lon, bbox.max_lat, 0.0)),
        (42113, "s", 0, "nan"),
    ], (bbox.min_lon, sx, 0.0, bbox.max_lat, 0.0, -sy)


def main() -> int:
    grid = generate_fishnet(exact_grid_bbox(31.0, -104.0, nx=2, ny=1), TILE_M)
    assert (grid.num_tiles_x, grid.num_tiles_y) == (2, 1), grid
    plan = plan_batches(grid, TILE_M, resolution_m=10.0)
    assert plan.num_batches == 2, plan

    responses = FIXTURES / "responses"
    for d in (responses, GOLDENS):
        d.mkdir(parents=True, exist_ok=True)
    write_manifest(plan, YEARS, SUMMER_WINDOW, FIXTURES / "manifest.json")

    for bi in range(plan.num_batches):
        batch = batch_by_id(plan, bi)
        width, height = batch_raster_size(plan, batch)
        for year in YEARS:
            stem = f"batch_{batch.batch_id}_{year}_0601-1001"
            data = synth_response(batch.batch_id, year, height, width)
            tags, gt = geotiff_tags(batch.bbox, height, width)
            tifffile.imwrite(
                responses / f"{stem}.tif",
                data,
                photometric="minisblack",
                extratags=tags,
            )

            probs = data[:9]
            label = data[9]
            label_u8 = np.where(np.isnan(label), 255, np.rint(label)).astype(np.uint8)
            ts = datetime.date(year, 6, 1)

            probs_path = GOLDENS / f"{stem}.probs.lras"
            write_raster(prob_raster(np.ascontiguousarray(probs), gt), probs_path)
            write_sidecar(probs_path, ts, batch.batch_id, year)
            label_path = GOLDENS / f"{stem}.lras"
            write_raster(label_raster(label_u8, gt), label_path)
            write_sidecar(label_path, ts, batch.batch_id, year)
            print(f"wrote {stem}: {width}x{height}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
