"""Command-line pipeline driver.

One subcommand per stage, all driven by the same JSON config: fishnet ->
plan -> synth (or a real exporter filling the images directory) ->
correct -> metrics -> sequences -> train -> predict -> evaluate. Each
stage reads the previous stage's artifact from the output directory and
writes its own, so stages can be rerun or swapped independently.

Exit codes: 0 success, 1 validation error, 2 missing data, 3 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import datetime
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .batching import (
    batch_by_id,
    batch_of_tile,
    batch_raster_size,
    iter_batches,
    plan_batches,
    tile_pixel_window,
    write_manifest,
)
from .composite import ImageCollection, correct_year, write_reports_csv
from .config import PipelineConfig, load_config, polygon_bbox
from .errors import DataUnavailableError, FormatError, PipelineError, ValidationError
from .forecast import evaluate, load_model, save_model, tile_features, write_eval_csv, xgclm_predict, xgclm_train
from .geo import filter_by_polygon, generate_fishnet, load_grid, save_grid
from .metrics import SequenceKey, attach_frames, build_table, read_table_csv, sequence_index, write_table_csv
from .raster import SceneSpec, crop, read_raster, read_sidecar, synth_scene, write_raster, write_sidecar

SEQUENCES_CSV_HEADER = "tile_id,start_year,end_year,target_year,horizon,target_value"
PREDICTIONS_CSV_HEADER = "tile_id,start_year,end_year,target_year,horizon,branch,probability,prediction"

_LOCK_NAME = ".lock"


def thread_count() -> int:
    raw = os.environ.get("FISHNET_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"FISHNET_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValidationError(f"FISHNET_THREADS must be >= 0, got {n}")
    return n if n > 0 else (os.cpu_count() or 1)


def _parallel_map(fn, items):
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@contextlib.contextmanager
def _output_lock(out_dir):
    lock_path = out_dir / _LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(
            f"output directory is locked by another run ({lock_path}); remove the file if stale"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(lock_path)
        except OSError:
            pass


def _require_file(path, hint: str):
    if not path.exists():
        raise DataUnavailableError(f"{path} not found; {hint}")
    return path


# -- artifact locations --------------------------------------------------------


def _grid_path(cfg):
    return cfg.output_dir / "grid.json"


def _manifest_path(cfg):
    return cfg.output_dir / "manifest.json"


def _composites_dir(cfg):
    return cfg.output_dir / "composites"


def _composite_path(cfg, batch_id: int, year: int):
    return _composites_dir(cfg) / f"batch_{batch_id}_{year}.lras"


def _table_path(cfg):
    return cfg.output_dir / "table.csv"


def _sequences_path(cfg):
    return cfg.output_dir / "sequences.csv"


def _model_path(cfg):
    return cfg.output_dir / "model.json"


def _split_path(cfg):
    return cfg.output_dir / "split.json"


def _predictions_path(cfg):
    return cfg.output_dir / "predictions.csv"


def _eval_path(cfg):
    return cfg.output_dir / "eval_report.csv"


# -- shared loading helpers ------------------------------------------------------


def _load_grid(cfg):
    return load_grid(_require_file(_grid_path(cfg), "run the fishnet stage first"))


def _load_plan(cfg):
    grid = _load_grid(cfg)
    return grid, plan_batches(grid, cfg.batch_size_m, cfg.resolution_m)


def _batch_geotransform(batch, width_px: int, height_px: int):
    bb = batch.bbox
    return (
        bb.min_lon,
        (bb.max_lon - bb.min_lon) / width_px,
        0.0,
        bb.max_lat,
        0.0,
        -(bb.max_lat - bb.min_lat) / height_px,
    )


def _batch_seed(seed: int, batch_id: int) -> int:
    return (seed * 1_000_003 + batch_id) % (1 << 63)


def assign_split(grid, split_cfg) -> dict[int, str]:
    """Partition included tiles into train/val/test by tile column.

    Column bands keep the three regions spatially disjoint, which is what
    makes the held-out metrics meaningful.
    """
    nx = grid.num_tiles_x
    c_train = int(nx * split_cfg.train)
    c_val = int(nx * (split_cfg.train + split_cfg.val))
    parts = {}
    for j in range(grid.num_tiles_y):
        for i in range(nx):
            if not grid.included(i, j):
                continue
            tile_id = j * nx + i
            if i < c_train:
                parts[tile_id] = "train"
            elif i < c_val:
                parts[tile_id] = "val"
            else:
                parts[tile_id] = "test"
    return parts


def _load_frames(cfg, grid, plan, pairs):
    """Map (tile_id, year) -> cropped tile frame, reading each composite once."""
    by_batch_year: dict[tuple[int, int], list[int]] = {}
    for tile_id, year in pairs:
        tile = grid.tile_by_id(tile_id)
        batch = batch_of_tile(plan, tile)
        by_batch_year.setdefault((batch.batch_id, year), []).append(tile_id)
    frames = {}
    for (batch_id, year), tile_ids in sorted(by_batch_year.items()):
        path = _require_file(
            _composite_path(cfg, batch_id, year), "run the correct stage first"
        )
        raster = read_raster(path)
        batch = batch_by_id(plan, batch_id)
        for tile_id in tile_ids:
            tile = grid.tile_by_id(tile_id)
            window = tile_pixel_window(plan, batch, tile)
            frames[(tile_id, year)] = crop(raster, window)
    return frames


def _read_sequences_csv(path) -> list[SequenceKey]:
    keys = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SEQUENCES_CSV_HEADER.split(","):
            raise FormatError(f"unexpected sequences header {header!r}", offset=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                start, end = int(row[1]), int(row[2])
                key = SequenceKey(
                    tile_id=int(row[0]),
                    input_years=tuple(range(start, end + 1)),
                    target_year=int(row[3]),
                    target_value=float(row[5]),
                    horizon=int(row[4]),
                )
            except (IndexError, ValueError) as exc:
                raise FormatError(f"bad sequence row: {exc}", offset=lineno) from exc
            if key.horizon != key.target_year - end:
                raise FormatError(f"inconsistent sequence row {row}", offset=lineno)
            keys.append(key)
    return keys


def _check_keys_against_table(keys, table):
    for key in keys:
        row = table.require(key.tile_id, key.target_year)
        if row.built != key.target_value:
            raise ValidationError(
                f"sequences.csv disagrees with table.csv for tile {key.tile_id}, "
                f"year {key.target_year}; regenerate the sequences stage"
            )


def _evaluation_keys(cfg, keys, split):
    """Test-region sequences anchored at the first available window."""
    first_year = cfg.years[0]
    return [
        k
        for k in keys
        if split.get(k.tile_id) == "test"
        and k.input_years[0] == first_year
        and k.horizon in cfg.horizons
    ]


# -- stages ----------------------------------------------------------------------


def cmd_fishnet(cfg: PipelineConfig) -> None:
    if cfg.region_polygon is not None:
        grid = generate_fishnet(polygon_bbox(cfg.region_polygon), cfg.tile_size_m)
        grid = filter_by_polygon(grid, cfg.region_polygon)
    else:
        grid = generate_fishnet(cfg.region_bbox, cfg.tile_size_m)
    save_grid(grid, _grid_path(cfg))
    included = int(grid.mask.sum()) if grid.mask is not None else grid.num_tiles
    print(
        f"grid: {grid.num_tiles_x} x {grid.num_tiles_y} tiles "
        f"({included} included) -> {_grid_path(cfg)}"
    )


def cmd_plan(cfg: PipelineConfig) -> None:
    grid, plan = _load_plan(cfg)
    write_manifest(plan, list(cfg.years), cfg.season, _manifest_path(cfg))
    print(
        f"plan: {plan.num_batches_x} x {plan.num_batches_y} batches "
        f"({plan.num_batches} total) -> {_manifest_path(cfg)}"
    )


def cmd_synth(cfg: PipelineConfig) -> None:
    grid, plan = _load_plan(cfg)
    cfg.images_dir.mkdir(parents=True, exist_ok=True)

    def one(batch):
        width_px, height_px = batch_raster_size(plan, batch)
        spec = SceneSpec(
            width=width_px,
            height=height_px,
            years=cfg.years,
            seed=_batch_seed(cfg.seed, batch.batch_id),
            urban_seeds=cfg.scene.urban_seeds,
            growth_rate=cfg.scene.growth_rate,
            cloud_gap_fraction=cfg.scene.cloud_gap_fraction,
            snow_months=cfg.scene.snow_months,
        )
        scene = synth_scene(spec, _batch_geotransform(batch, width_px, height_px))
        count = 0
        for year, items in scene.items():
            year_dir = cfg.images_dir / f"batch_{batch.batch_id}" / str(year)
            year_dir.mkdir(parents=True, exist_ok=True)
            for ts, image in items:
                path = year_dir / f"{ts.isoformat()}.lras"
                write_raster(image, path)
                write_sidecar(path, ts, batch.batch_id, year)
                count += 1
        return count

    counts = _parallel_map(one, iter_batches(plan))
    print(f"synth: wrote {sum(counts)} images for {plan.num_batches} batches -> {cfg.images_dir}")


def cmd_correct(cfg: PipelineConfig) -> None:
    grid, plan = _load_plan(cfg)
    _composites_dir(cfg).mkdir(parents=True, exist_ok=True)

    def one(pair):
        batch_id, year = pair
        year_dir = cfg.images_dir / f"batch_{batch_id}" / str(year)
        items = []
        if year_dir.is_dir():
            for path in sorted(year_dir.glob("*.lras")):
                meta = read_sidecar(path)
                items.append((meta["timestamp"], read_raster(path)))
        collection = ImageCollection(tuple(items))
        if len(collection) == 0:
            raise DataUnavailableError(f"no imagery for batch {batch_id}, year {year} in {year_dir}")
        composite, report = correct_year(collection, collection, cfg.aggregation_op, cfg.season)
        out_path = _composite_path(cfg, batch_id, year)
        write_raster(composite, out_path)
        sm, sd = cfg.season.start_month_day
        write_sidecar(out_path, datetime.date(year, sm, sd), batch_id, year)
        return replace(report, batch_id=batch_id, year=year)

    pairs = [(b.batch_id, y) for b in iter_batches(plan) for y in cfg.years]
    reports = _parallel_map(one, pairs)
    reports.sort(key=lambda r: (r.batch_id, r.year))
    write_reports_csv(reports, _composites_dir(cfg) / "reports.csv")
    imputed = sum(r.imputed_count for r in reports)
    missing = sum(r.missing_after for r in reports)
    print(
        f"correct: {len(reports)} composites, imputed {imputed} pixels, "
        f"{missing} still missing -> {_composites_dir(cfg)}"
    )


def cmd_metrics(cfg: PipelineConfig) -> None:
    grid, plan = _load_plan(cfg)
    corrected = {}
    for batch in iter_batches(plan):
        for year in cfg.years:
            path = _require_file(
                _composite_path(cfg, batch.batch_id, year), "run the correct stage first"
            )
            corrected[(batch.batch_id, year)] = read_raster(path)
    table = build_table(grid, plan, corrected)
    write_table_csv(table, _table_path(cfg))
    print(f"metrics: {len(table)} rows -> {_table_path(cfg)}")


def cmd_sequences(cfg: PipelineConfig) -> None:
    table = read_table_csv(_require_file(_table_path(cfg), "run the metrics stage first"))
    keys = []
    for horizon in cfg.horizons:
        keys.extend(sequence_index(table, cfg.window, horizon, cfg.valid_threshold))
    keys.sort(key=lambda k: (k.tile_id, k.input_years[0], k.horizon))
    with open(_sequences_path(cfg), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SEQUENCES_CSV_HEADER.split(","))
        for k in keys:
            writer.writerow(
                [k.tile_id, k.input_years[0], k.input_years[-1], k.target_year, k.horizon, repr(k.target_value)]
            )
    print(f"sequences: {len(keys)} windows -> {_sequences_path(cfg)}")


def cmd_train(cfg: PipelineConfig) -> None:
    grid, plan = _load_plan(cfg)
    table = read_table_csv(_require_file(_table_path(cfg), "run the metrics stage first"))
    keys = _read_sequences_csv(_require_file(_sequences_path(cfg), "run the sequences stage first"))
    _check_keys_against_table(keys, table)
    split = assign_split(grid, cfg.split)
    fit_keys = [k for k in keys if split.get(k.tile_id) in ("train", "val")]
    if not fit_keys:
        raise DataUnavailableError("no train/val sequences; check the split fractions")
    pairs = {(k.tile_id, y) for k in fit_keys for y in k.input_years}
    frames = _load_frames(cfg, grid, plan, pairs)
    sequences = attach_frames(fit_keys, frames)
    fit_split = {t: p for t, p in split.items() if p in ("train", "val")}
    model = xgclm_train(table, sequences, fit_split, cfg.gbt, tau=cfg.tau)
    save_model(model, _model_path(cfg))
    with open(_split_path(cfg), "w", encoding="utf-8") as fh:
        json.dump(
            {
                part: sorted(t for t, p in split.items() if p == part)
                for part in ("train", "val", "test")
            },
            fh,
        )
        fh.write("\n")
    counts = {p: sum(1 for v in split.values() if v == p) for p in ("train", "val", "test")}
    print(
        f"train: route_threshold {model.route_threshold}, tiles {counts} -> {_model_path(cfg)}"
    )


def cmd_predict(cfg: PipelineConfig) -> None:
    grid, plan = _load_plan(cfg)
    table = read_table_csv(_require_file(_table_path(cfg), "run the metrics stage first"))
    keys = _read_sequences_csv(_require_file(_sequences_path(cfg), "run the sequences stage first"))
    model = load_model(_require_file(_model_path(cfg), "run the train stage first"))
    split = assign_split(grid, cfg.split)
    eval_keys = _evaluation_keys(cfg, keys, split)
    if not eval_keys:
        raise DataUnavailableError("no test sequences to predict; check the split fractions")
    pairs = {(k.tile_id, y) for k in eval_keys for y in k.input_years}
    frames = _load_frames(cfg, grid, plan, pairs)
    sequences = attach_frames(eval_keys, frames)
    sequences.sort(key=lambda s: (s.tile_id, s.horizon))
    with open(_predictions_path(cfg), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_CSV_HEADER.split(","))
        for seq in sequences:
            feats, _ = tile_features(table, seq.tile_id, seq.input_years)
            result = xgclm_predict(model, feats, sequence=seq)
            writer.writerow(
                [
                    seq.tile_id,
                    seq.input_years[0],
                    seq.input_years[-1],
                    seq.target_year,
                    seq.horizon,
                    result.branch,
                    repr(result.probability),
                    repr(result.value),
                ]
            )
    print(f"predict: {len(sequences)} predictions -> {_predictions_path(cfg)}")


def cmd_evaluate(cfg: PipelineConfig) -> None:
    grid, plan = _load_plan(cfg)
    table = read_table_csv(_require_file(_table_path(cfg), "run the metrics stage first"))
    keys = _read_sequences_csv(_require_file(_sequences_path(cfg), "run the sequences stage first"))
    model = load_model(_require_file(_model_path(cfg), "run the train stage first"))
    split = assign_split(grid, cfg.split)
    eval_keys = _evaluation_keys(cfg, keys, split)
    if not eval_keys:
        raise DataUnavailableError("no test sequences to evaluate; check the split fractions")
    pairs = {(k.tile_id, y) for k in eval_keys for y in k.input_years}
    frames = _load_frames(cfg, grid, plan, pairs)
    sequences = attach_frames(eval_keys, frames)
    sequences.sort(key=lambda s: (s.tile_id, s.horizon))
    report = evaluate(model, table, sequences, horizons=cfg.horizons)
    write_eval_csv(report, _eval_path(cfg))
    for row in report.rows:
        wm = "n/a" if row.wmse is None else f"{row.wmse:.6f}"
        rr = "n/a" if row.r2 is None else f"{row.r2:.4f}"
        print(f"h={row.horizon} {row.branch}: n={row.n_tiles} wmse={wm} r2={rr}")
    print(f"evaluate -> {_eval_path(cfg)}")


_COMMANDS = {
    "fishnet": (cmd_fishnet, "generate the tile grid for the configured region"),
    "plan": (cmd_plan, "group tiles into batches and write the export manifest"),
    "synth": (cmd_synth, "generate synthetic imagery in place of real exports"),
    "correct": (cmd_correct, "build seasonal composites with annual imputation"),
    "metrics": (cmd_metrics, "extract per-tile class proportions into a table"),
    "sequences": (cmd_sequences, "index sliding-window training sequences"),
    "train": (cmd_train, "fit the two-stage forecasting model"),
    "predict": (cmd_predict, "predict built proportions for the test region"),
    "evaluate": (cmd_evaluate, "score predictions against held-out targets"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lulcpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to the pipeline config JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        with _output_lock(cfg.output_dir):
            _COMMANDS[args.command][0](cfg)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
