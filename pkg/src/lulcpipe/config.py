"""Pipeline configuration: one JSON document drives every CLI stage.

All relative paths in the document resolve against the config file's own
directory, so a config travels with its workspace. Unknown keys are
rejected everywhere; a typo should fail, not silently fall back to a
default.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, replace

from .composite import AGGREGATION_OPS, SeasonalWindow
from .errors import FormatError, ValidationError
from .forecast import DEFAULT_TAU, GBTParams
from .geo import BoundaryPolygon, GeoBoundingBox, GeoPoint
from .metrics import DEFAULT_VALID_THRESHOLD, DEFAULT_WINDOW


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic-scene knobs; raster dimensions come from the batch plan."""

    urban_seeds: int = 40
    growth_rate: float = 6.0
    cloud_gap_fraction: float = 0.1
    snow_months: bool = True


@dataclass(frozen=True)
class SplitConfig:
    """Train/validation fractions of the grid's tile columns; the rest is test."""

    train: float = 0.6
    val: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.train and 0.0 <= self.val and self.train + self.val < 1.0):
            raise ValidationError(
                f"split fractions must satisfy 0 < train, 0 <= val, train + val < 1, "
                f"got train={self.train}, val={self.val}"
            )


@dataclass(frozen=True)
class PipelineConfig:
    region_bbox: GeoBoundingBox | None
    region_polygon: BoundaryPolygon | None
    tile_size_m: float
    batch_size_m: float
    resolution_m: float
    years: tuple[int, ...]
    season: SeasonalWindow
    aggregation_op: str
    window: int
    horizons: tuple[int, ...]
    tau: float
    gbt: GBTParams
    seed: int
    output_dir: pathlib.Path
    images_dir: pathlib.Path
    scene: SceneConfig
    split: SplitConfig
    valid_threshold: float

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=int(seed))


_TOP_KEYS = {
    "region",
    "tile_size_m",
    "batch_size_m",
    "resolution_m",
    "years",
    "season",
    "aggregation_op",
    "window",
    "horizons",
    "tau",
    "gbt",
    "seed",
    "output_dir",
    "images_dir",
    "scene",
    "split",
    "valid_threshold",
}
_REQUIRED_KEYS = {"region", "tile_size_m", "batch_size_m", "years", "output_dir"}


def _check_keys(doc: dict, allowed: set, required: set, context: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ValidationError(f"unknown {context} keys: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise ValidationError(f"missing {context} keys: {sorted(missing)}")


def _load_polygon(path: pathlib.Path) -> BoundaryPolygon:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"polygon file is not valid JSON: {exc}", offset=exc.pos) from exc
    if not isinstance(doc, list) or len(doc) < 3:
        raise ValidationError("polygon file must be a JSON list of at least 3 [lat, lon] pairs")
    try:
        ring = [GeoPoint(float(lat), float(lon)) for lat, lon in doc]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"polygon file entries must be [lat, lon] pairs: {exc}") from exc
    if ring[0] != ring[-1]:
        ring.append(ring[0])
    return BoundaryPolygon(tuple(ring))


def polygon_bbox(poly: BoundaryPolygon) -> GeoBoundingBox:
    lats = [p.lat for p in poly.ring]
    lons = [p.lon for p in poly.ring]
    return GeoBoundingBox(min(lats), min(lons), max(lats), max(lons))


def _parse_region(doc, base_dir: pathlib.Path):
    if not isinstance(doc, dict):
        raise ValidationError("region must be an object with bbox or polygon_path")
    _check_keys(doc, {"bbox", "polygon_path"}, set(), "region")
    if ("bbox" in doc) == ("polygon_path" in doc):
        raise ValidationError("region needs exactly one of bbox or polygon_path")
    if "bbox" in doc:
        values = doc["bbox"]
        if not isinstance(values, list) or len(values) != 4:
            raise ValidationError("region bbox must be [min_lat, min_lon, max_lat, max_lon]")
        return GeoBoundingBox(*[float(v) for v in values]), None
    poly = _load_polygon(base_dir / str(doc["polygon_path"]))
    return None, poly


def load_config(path) -> PipelineConfig:
    path = pathlib.Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config is not valid JSON: {exc}", offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    _check_keys(doc, _TOP_KEYS, _REQUIRED_KEYS, "config")
    base_dir = path.parent.resolve()

    region_bbox, region_polygon = _parse_region(doc["region"], base_dir)

    years = doc["years"]
    if not isinstance(years, list) or not years:
        raise ValidationError("years must be a non-empty list")
    years = tuple(int(y) for y in years)
    if list(years) != sorted(set(years)):
        raise ValidationError(f"years must be strictly increasing and unique, got {list(years)}")

    season_doc = doc.get("season", {"start": "06-01", "end": "10-01"})
    _check_keys(season_doc, {"start", "end"}, {"start", "end"}, "season")
    season = SeasonalWindow.from_month_days(str(season_doc["start"]), str(season_doc["end"]))

    aggregation_op = str(doc.get("aggregation_op", "mode"))
    if aggregation_op not in AGGREGATION_OPS:
        raise ValidationError(f"unknown aggregation_op {aggregation_op!r}")

    horizons = doc.get("horizons", [1, 2, 3])
    if not isinstance(horizons, list) or not horizons:
        raise ValidationError("horizons must be a non-empty list")
    horizons = tuple(int(h) for h in horizons)
    if list(horizons) != sorted(set(horizons)) or horizons[0] < 1:
        raise ValidationError(f"horizons must be increasing positive integers, got {list(horizons)}")

    gbt_doc = doc.get("gbt", {})
    _check_keys(
        gbt_doc,
        {"num_rounds", "learning_rate", "max_depth", "min_samples_leaf"},
        set(),
        "gbt",
    )
    defaults = GBTParams()
    gbt = GBTParams(
        num_rounds=int(gbt_doc.get("num_rounds", defaults.num_rounds)),
        learning_rate=float(gbt_doc.get("learning_rate", defaults.learning_rate)),
        max_depth=int(gbt_doc.get("max_depth", defaults.max_depth)),
        min_samples_leaf=int(gbt_doc.get("min_samples_leaf", defaults.min_samples_leaf)),
        loss="squared",
        seed=int(doc.get("seed", 0)),
    )

    scene_doc = doc.get("scene", {})
    _check_keys(
        scene_doc,
        {"urban_seeds", "growth_rate", "cloud_gap_fraction", "snow_months"},
        set(),
        "scene",
    )
    scene_defaults = SceneConfig()
    scene = SceneConfig(
        urban_seeds=int(scene_doc.get("urban_seeds", scene_defaults.urban_seeds)),
        growth_rate=float(scene_doc.get("growth_rate", scene_defaults.growth_rate)),
        cloud_gap_fraction=float(
            scene_doc.get("cloud_gap_fraction", scene_defaults.cloud_gap_fraction)
        ),
        snow_months=bool(scene_doc.get("snow_months", scene_defaults.snow_months)),
    )

    split_doc = doc.get("split", {})
    _check_keys(split_doc, {"train", "val"}, set(), "split")
    split_defaults = SplitConfig()
    split = SplitConfig(
        train=float(split_doc.get("train", split_defaults.train)),
        val=float(split_doc.get("val", split_defaults.val)),
    )

    output_dir = (base_dir / str(doc["output_dir"])).resolve()
    images_dir = (
        (base_dir / str(doc["images_dir"])).resolve()
        if "images_dir" in doc
        else output_dir / "images"
    )

    window = int(doc.get("window", DEFAULT_WINDOW))
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    tau = float(doc.get("tau", DEFAULT_TAU))
    if tau < 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    valid_threshold = float(doc.get("valid_threshold", DEFAULT_VALID_THRESHOLD))
    if not 0.0 <= valid_threshold <= 1.0:
        raise ValidationError(f"valid_threshold must be in [0, 1], got {valid_threshold}")

    return PipelineConfig(
        region_bbox=region_bbox,
        region_polygon=region_polygon,
        tile_size_m=float(doc["tile_size_m"]),
        batch_size_m=float(doc["batch_size_m"]),
        resolution_m=float(doc.get("resolution_m", 10.0)),
        years=years,
        season=season,
        aggregation_op=aggregation_op,
        window=window,
        horizons=horizons,
        tau=tau,
        gbt=gbt,
        seed=int(doc.get("seed", 0)),
        output_dir=output_dir,
        images_dir=images_dir,
        scene=scene,
        split=split,
        valid_threshold=valid_threshold,
    )
