import json

import pytest

from lulcpipe.cli import main
from lulcpipe.geo import GeoPoint, load_grid, locate

from test_geo import exact_grid_bbox

ALL_STAGES = [
    "fishnet",
    "plan",
    "synth",
    "correct",
    "metrics",
    "sequences",
    "train",
    "predict",
    "evaluate",
]


def base_config(nx=9, ny=4, **overrides):
    bbox = exact_grid_bbox(31.0, -104.0, 400.0, nx=nx, ny=ny)
    doc = {
        "region": {"bbox": [bbox.min_lat, bbox.min_lon, bbox.max_lat, bbox.max_lon]},
        "tile_size_m": 400.0,
        "batch_size_m": 1600.0,
        "resolution_m": 10.0,
        "years": list(range(2016, 2023)),
        "horizons": [1, 2, 3],
        "seed": 7,
        "output_dir": "out",
        "gbt": {"num_rounds": 80, "min_samples_leaf": 10},
        "scene": {"urban_seeds": 8, "growth_rate": 6.0, "cloud_gap_fraction": 0.1},
        "split": {"train": 0.6, "val": 0.2},
    }
    doc.update(overrides)
    return doc


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def run(stage, config_path, *extra):
    return main([stage, "--config", str(config_path), *extra])


def run_pipeline(config_path, stages=ALL_STAGES):
    for stage in stages:
        code = run(stage, config_path)
        assert code == 0, f"stage {stage} exited {code}"


def test_full_pipeline(tmp_path):
    config = write_config(tmp_path, base_config())
    run_pipeline(config)
    out = tmp_path / "out"

    assert (out / "grid.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == 1
    assert len(manifest["batches"]) == 3
    assert len(manifest["seasons"]) == 7

    composites = sorted((out / "composites").glob("batch_*.lras"))
    assert len(composites) == 3 * 7
    assert (out / "composites" / "reports.csv").exists()

    table_lines = (out / "table.csv").read_text().splitlines()
    assert len(table_lines) == 1 + 9 * 4 * 7

    seq_lines = (out / "sequences.csv").read_text().splitlines()
    assert seq_lines[0] == "tile_id,start_year,end_year,target_year,horizon,target_value"
    assert len(seq_lines) == 1 + 9 * 4 * 6  # per tile: 3 + 2 + 1 windows

    model = json.loads((out / "model.json").read_text())
    assert model["version"] == 1
    split = json.loads((out / "split.json").read_text())
    assert len(split["train"]) == 5 * 4
    assert len(split["val"]) == 2 * 4
    assert len(split["test"]) == 2 * 4

    pred_lines = (out / "predictions.csv").read_text().splitlines()
    assert pred_lines[0] == "tile_id,start_year,end_year,target_year,horizon,branch,probability,prediction"
    assert len(pred_lines) == 1 + 8 * 3  # test tiles x horizons, first window only
    for line in pred_lines[1:]:
        fields = line.split(",")
        assert fields[1] == "2016" and fields[2] == "2019"
        assert fields[5] in ("static", "active")
        assert 0.0 <= float(fields[7]) <= 1.0

    eval_lines = (out / "eval_report.csv").read_text().splitlines()
    assert eval_lines[0] == "horizon,branch,n_tiles,mse,wmse,r2"
    assert len(eval_lines) == 1 + 3 * 3  # horizons x (overall, static, active)
    overall = [l for l in eval_lines[1:] if l.split(",")[1] == "overall"]
    assert all(int(l.split(",")[2]) == 8 for l in overall)

    assert not (out / ".lock").exists()


def test_missing_config_is_io_error(tmp_path):
    assert run("fishnet", tmp_path / "nope.json") == 3


def test_malformed_config(tmp_path):
    config = tmp_path / "config.json"
    config.write_text("{ not json")
    assert run("fishnet", config) == 1

    config.write_text(json.dumps(base_config(tile_sizem=1.0)))
    assert run("fishnet", config) == 1  # unknown key

    doc = base_config()
    del doc["region"]
    config.write_text(json.dumps(doc))
    assert run("fishnet", config) == 1


def test_stage_order_enforced(tmp_path):
    config = write_config(tmp_path, base_config())
    assert run("plan", config) == 2
    assert run("correct", config) == 2
    assert run("train", config) == 2
    assert run("evaluate", config) == 2


def test_correct_without_images(tmp_path):
    config = write_config(tmp_path, base_config())
    run_pipeline(config, stages=["fishnet", "plan"])
    assert run("correct", config) == 2


def test_output_lock(tmp_path):
    config = write_config(tmp_path, base_config())
    out = tmp_path / "out"
    out.mkdir()
    (out / ".lock").write_text("999\n")
    assert run("fishnet", config) == 1
    (out / ".lock").unlink()
    assert run("fishnet", config) == 0


def test_usage_and_help():
    assert main([]) == 1
    assert main(["--help"]) == 0
    assert main(["warp", "--config", "x"]) == 1


def test_polygon_region(tmp_path):
    bbox = exact_grid_bbox(31.0, -104.0, 400.0, nx=6, ny=4)
    mid_lon = (bbox.min_lon + bbox.max_lon) / 2.0
    ring = [
        [bbox.min_lat - 0.001, bbox.min_lon - 0.001],
        [bbox.min_lat - 0.001, mid_lon],
        [bbox.max_lat + 0.001, mid_lon],
        [bbox.max_lat + 0.001, bbox.min_lon - 0.001],
    ]
    (tmp_path / "region.json").write_text(json.dumps(ring))
    doc = base_config(region={"polygon_path": "region.json"})
    config = write_config(tmp_path, doc)
    assert run("fishnet", config) == 0

    grid = load_grid(tmp_path / "out" / "grid.json")
    assert grid.mask is not None
    included = int(grid.mask.sum())
    assert 0 < included < grid.num_tiles
    # a point well east of the polygon is off the masked grid
    east = GeoPoint((bbox.min_lat + bbox.max_lat) / 2.0, mid_lon + 1e-3)
    assert locate(grid, east) is None


def test_seed_override_changes_imagery(tmp_path):
    config = write_config(tmp_path, base_config(nx=4, ny=4, years=[2016]))
    run_pipeline(config, stages=["fishnet", "plan", "synth"])
    sample = next((tmp_path / "out" / "images").rglob("*.lras"))
    before = sample.read_bytes()
    assert run("synth", config, "--seed", "1") == 0
    assert sample.read_bytes() != before
    assert run("synth", config) == 0
    assert sample.read_bytes() == before


def test_thread_env(tmp_path, monkeypatch):
    doc = base_config(nx=4, ny=4, years=[2016, 2017])
    serial = write_config(tmp_path, dict(doc, output_dir="serial"), name="serial.json")
    threaded = write_config(tmp_path, dict(doc, output_dir="threaded"), name="threaded.json")

    monkeypatch.setenv("FISHNET_THREADS", "1")
    run_pipeline(serial, stages=["fishnet", "plan", "synth", "correct"])
    monkeypatch.setenv("FISHNET_THREADS", "4")
    run_pipeline(threaded, stages=["fishnet", "plan", "synth", "correct"])

    serial_files = sorted((tmp_path / "serial").rglob("*.lras"))
    threaded_files = sorted((tmp_path / "threaded").rglob("*.lras"))
    assert len(serial_files) == len(threaded_files) > 0
    for a, b in zip(serial_files, threaded_files):
        assert a.read_bytes() == b.read_bytes()
    a = (tmp_path / "serial" / "composites" / "reports.csv").read_text()
    b = (tmp_path / "threaded" / "composites" / "reports.csv").read_text()
    assert a == b


def test_thread_env_invalid(tmp_path, monkeypatch):
    config = write_config(tmp_path, base_config(nx=4, ny=4, years=[2016]))
    run_pipeline(config, stages=["fishnet", "plan"])
    monkeypatch.setenv("FISHNET_THREADS", "many")
    assert run("synth", config) == 1
    monkeypatch.setenv("FISHNET_THREADS", "-2")
    assert run("synth", config) == 1


def test_determinism_small(tmp_path):
    doc = base_config(
        nx=6,
        ny=3,
        years=list(range(2016, 2021)),
        horizons=[1],
        gbt={"num_rounds": 40, "min_samples_leaf": 2},
        scene={"urban_seeds": 2, "growth_rate": 6.0, "cloud_gap_fraction": 0.1},
    )
    a = write_config(tmp_path, dict(doc, output_dir="a"), name="a.json")
    b = write_config(tmp_path, dict(doc, output_dir="b"), name="b.json")
    run_pipeline(a)
    run_pipeline(b)
    artifacts = [
        "grid.json",
        "manifest.json",
        "composites/reports.csv",
        "table.csv",
        "sequences.csv",
        "model.json",
        "split.json",
        "predictions.csv",
        "eval_report.csv",
    ]
    for name in artifacts:
        left = (tmp_path / "a" / name).read_bytes()
        right = (tmp_path / "b" / name).read_bytes()
        assert left == right, f"{name} differs between identical runs"
