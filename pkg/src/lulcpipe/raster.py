"""Raster data model, canonical file format, and synthetic scene generator.

Rasters carry either a single u8 label band or nine f32 class-probability
bands, matching the Dynamic World layout. The canonical on-disk format is
a small custom container ("LRAS") instead of GeoTIFF so the engine stays
free of heavyweight geo dependencies; GeoTIFF handling belongs to the
exporter.

The synthetic scene generator stands in for real exports during testing:
a blocky static landscape plus urban kernels whose built area advances
deterministically year over year, with optional winter snow cover and
per-image cloud gaps.
"""

from __future__ import annotations

import datetime
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .batching import PixelWindow
from .errors import FormatError, ValidationError

CLASS_NAMES = (
    "water",
    "trees",
    "grass",
    "flooded_vegetation",
    "crops",
    "shrub_and_scrub",
    "built",
    "bare",
    "snow_and_ice",
)
CLASS_INDEX = {name: k for k, name in enumerate(CLASS_NAMES)}
NUM_CLASSES = 9
BUILT = CLASS_INDEX["built"]  # 6
SNOW_AND_ICE = CLASS_INDEX["snow_and_ice"]  # 8

LABEL_NODATA = 255
PROB_NODATA = float("nan")

DTYPE_U8 = "u8"
DTYPE_F32 = "f32"
_DTYPE_CODES = {DTYPE_U8: 0, DTYPE_F32: 1}
_CODE_DTYPES = {0: DTYPE_U8, 1: DTYPE_F32}
_NP_DTYPES = {DTYPE_U8: np.uint8, DTYPE_F32: np.float32}

# magic, version, flags, width, height, bands, dtype, reserved
_HEADER_FMT = "<4sHHIIHBB6dd"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)  # 76 bytes
_MAGIC = b"LRAS"
_MAX_PIXELS = 1 << 40  # refuse absurd headers before allocating

IDENTITY_GEOTRANSFORM = (0.0, 1.0, 0.0, 0.0, 0.0, -1.0)


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """In-memory raster: (bands, height, width) array plus affine placement.

    ``geotransform`` follows the usual 6-coefficient affine convention:
    (origin_lon, pixel_width, row_rotation, origin_lat, col_rotation,
    pixel_height), with pixel_height negative for north-up rasters.
    """

    width: int
    height: int
    bands: int
    dtype: str
    geotransform: tuple[float, float, float, float, float, float]
    nodata: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dtype not in _NP_DTYPES:
            raise ValidationError(f"unsupported dtype {self.dtype!r}")
        if self.width < 1 or self.height < 1 or self.bands < 1:
            raise ValidationError(
                f"raster dimensions must be positive, got {self.bands} x {self.height} x {self.width}"
            )
        gt = tuple(float(v) for v in self.geotransform)
        if len(gt) != 6:
            raise ValidationError(f"geotransform needs 6 coefficients, got {len(gt)}")
        object.__setattr__(self, "geotransform", gt)
        data = np.asarray(self.data, dtype=_NP_DTYPES[self.dtype])
        expected = (self.bands, self.height, self.width)
        if data.shape != expected:
            raise ValidationError(f"data shape {data.shape} does not match {expected}")
        if self.dtype == DTYPE_U8:
            if not bool(((data <= 8) | (data == LABEL_NODATA)).all()):
                raise ValidationError("label raster contains values outside {0..8, 255}")
        else:
            finite = data[np.isfinite(data)]
            if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
                raise ValidationError("probability raster contains values outside [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterGrid):
            return NotImplemented
        if (self.width, self.height, self.bands, self.dtype, self.geotransform) != (
            other.width, other.height, other.bands, other.dtype, other.geotransform
        ):
            return False
        nodata_match = (
            np.isnan(self.nodata) and np.isnan(other.nodata)
        ) or self.nodata == other.nodata
        return nodata_match and bool(np.array_equal(self.data, other.data, equal_nan=True))

    def valid_mask(self) -> np.ndarray:
        """Boolean (bands, height, width) array, True where a value is present."""
        if self.dtype == DTYPE_U8:
            return self.data != LABEL_NODATA
        return ~np.isnan(self.data)


def label_raster(data: np.ndarray, geotransform=IDENTITY_GEOTRANSFORM) -> RasterGrid:
    data = np.asarray(data, dtype=np.uint8)
    if data.ndim == 2:
        data = data[None, :, :]
    return RasterGrid(
        width=data.shape[2],
        height=data.shape[1],
        bands=data.shape[0],
        dtype=DTYPE_U8,
        geotransform=geotransform,
        nodata=float(LABEL_NODATA),
        data=data,
    )


def prob_raster(data: np.ndarray, geotransform=IDENTITY_GEOTRANSFORM) -> RasterGrid:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 3:
        raise ValidationError(f"probability raster needs (bands, height, width) data, got {data.shape}")
    return RasterGrid(
        width=data.shape[2],
        height=data.shape[1],
        bands=data.shape[0],
        dtype=DTYPE_F32,
        geotransform=geotransform,
        nodata=PROB_NODATA,
        data=data,
    )


def write_raster(r: RasterGrid, path) -> None:
    header = struct.pack(
        _HEADER_FMT,
        _MAGIC,
        1,
        0,
        r.width,
        r.height,
        r.bands,
        _DTYPE_CODES[r.dtype],
        0,
        *r.geotransform,
        r.nodata,
    )
    if r.dtype == DTYPE_U8:
        payload = r.data.tobytes()
    else:
        payload = np.ascontiguousarray(r.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_raster(path) -> RasterGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_SIZE:
        raise FormatError(f"file too short for header ({len(raw)} bytes)", offset=len(raw))
    magic, version, flags, width, height, bands, dtype_code, reserved, *rest = struct.unpack(
        _HEADER_FMT, raw[:_HEADER_SIZE]
    )
    geotransform = tuple(rest[:6])
    nodata = rest[6]
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported version {version}", offset=4)
    if flags != 0:
        raise FormatError(f"unsupported flags {flags:#x}", offset=6)
    if dtype_code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}", offset=18)
    if reserved != 0:
        raise FormatError(f"reserved byte must be 0, got {reserved}", offset=19)
    if width < 1 or height < 1 or bands < 1:
        raise FormatError(f"bad dimensions {bands} x {height} x {width}", offset=8)
    count = width * height * bands
    if count > _MAX_PIXELS:
        raise FormatError(f"dimensions overflow sanity bound ({count} samples)", offset=8)
    dtype = _CODE_DTYPES[dtype_code]
    np_dtype = np.dtype("<f4") if dtype == DTYPE_F32 else np.dtype(np.uint8)
    expected = count * np_dtype.itemsize
    if len(raw) - _HEADER_SIZE != expected:
        raise FormatError(
            f"payload is {len(raw) - _HEADER_SIZE} bytes, expected {expected}",
            offset=_HEADER_SIZE,
        )
    data = np.frombuffer(raw, dtype=np_dtype, count=count, offset=_HEADER_SIZE)
    data = data.reshape(bands, height, width).astype(_NP_DTYPES[dtype], copy=True)
    canonical_nodata = float(LABEL_NODATA) if dtype == DTYPE_U8 else PROB_NODATA
    stored_matches = (np.isnan(nodata) and np.isnan(canonical_nodata)) or nodata == canonical_nodata
    if not stored_matches:
        raise FormatError(f"unexpected nodata sentinel {nodata!r} for dtype {dtype}", offset=68)
    return RasterGrid(
        width=width,
        height=height,
        bands=bands,
        dtype=dtype,
        geotransform=geotransform,
        nodata=canonical_nodata,
        data=data,
    )


def sidecar_path(lras_path):
    import pathlib

    return pathlib.Path(lras_path).with_suffix(".meta.json")


def write_sidecar(lras_path, timestamp: datetime.date, batch_id: int, year: int) -> None:
    doc = {"timestamp": timestamp.isoformat(), "batch_id": int(batch_id), "year": int(year)}
    with open(sidecar_path(lras_path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_sidecar(lras_path) -> dict:
    with open(sidecar_path(lras_path), "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"sidecar is not valid JSON: {exc}", offset=exc.pos) from exc
    try:
        return {
            "timestamp": datetime.date.fromisoformat(doc["timestamp"]),
            "batch_id": int(doc["batch_id"]),
            "year": int(doc["year"]),
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed sidecar: {exc}") from exc


def argmax_label(p: RasterGrid) -> RasterGrid:
    """Label raster holding each pixel's most probable class.

    Ties resolve to the lowest band index; a pixel is nodata only when
    all nine bands are nodata there.
    """
    if p.dtype != DTYPE_F32 or p.bands != NUM_CLASSES:
        raise ValidationError(f"argmax needs a {NUM_CLASSES}-band probability raster")
    missing = np.isnan(p.data)
    filled = np.where(missing, -np.inf, p.data)
    labels = np.argmax(filled, axis=0).astype(np.uint8)  # first max = lowest index
    labels[missing.all(axis=0)] = LABEL_NODATA
    return label_raster(labels[None, :, :], p.geotransform)


def crop(r: RasterGrid, w: PixelWindow) -> RasterGrid:
    if w.x0 + w.width > r.width or w.y0 + w.height > r.height:
        raise ValidationError(
            f"window {w} does not fit inside raster {r.width} x {r.height}"
        )
    data = r.data[:, w.y0 : w.y0 + w.height, w.x0 : w.x0 + w.width].copy()
    gt = r.geotransform
    origin_lon = gt[0] + w.x0 * gt[1] + w.y0 * gt[2]
    origin_lat = gt[3] + w.x0 * gt[4] + w.y0 * gt[5]
    return replace(
        r,
        width=w.width,
        height=w.height,
        geotransform=(origin_lon, gt[1], gt[2], origin_lat, gt[4], gt[5]),
        data=data,
    )


# -- synthetic scenes -------------------------------------------------------

# month/day of the per-year observation timestamps
SCENE_MONTH_DAYS = ((1, 15), (3, 15), (6, 15), (7, 15), (8, 15), (9, 15), (11, 15))
SNOW_MONTHS = frozenset({11, 12, 1, 2, 3})

# base landscape block classes and their sampling weights; built blocks act
# as static towns that never grow
_BASE_CLASSES = np.array([0, 1, 2, 3, 4, 5, 6, 7], dtype=np.uint8)
_BASE_WEIGHTS = np.array([0.08, 0.30, 0.22, 0.02, 0.18, 0.12, 0.05, 0.03])
_BASE_BLOCK_PX = 32


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic description of a synthetic label-image time series."""

    width: int
    height: int
    years: tuple[int, ...]
    seed: int
    urban_seeds: int
    growth_rate: float
    cloud_gap_fraction: float
    snow_months: bool

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"scene must be at least 1x1, got {self.width} x {self.height}")
        years = tuple(int(y) for y in self.years)
        if not years or list(years) != sorted(set(years)):
            raise ValidationError(f"years must be non-empty, strictly increasing, got {self.years}")
        object.__setattr__(self, "years", years)
        if self.urban_seeds < 0:
            raise ValidationError(f"urban_seeds must be >= 0, got {self.urban_seeds}")
        if self.growth_rate < 0:
            raise ValidationError(f"growth_rate must be >= 0, got {self.growth_rate}")
        if not 0.0 <= self.cloud_gap_fraction <= 1.0:
            raise ValidationError(
                f"cloud_gap_fraction must be in [0, 1], got {self.cloud_gap_fraction}"
            )


@dataclass(frozen=True)
class _Kernel:
    x: int
    y: int
    direction: int  # 0=E, 1=W, 2=N, 3=S
    thickness: int
    length: int
    rate: float


def _base_landscape(spec: SceneSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    by = -(-spec.height // _BASE_BLOCK_PX)
    bx = -(-spec.width // _BASE_BLOCK_PX)
    blocks = rng.choice(_BASE_CLASSES, size=(by, bx), p=_BASE_WEIGHTS)
    base = np.repeat(np.repeat(blocks, _BASE_BLOCK_PX, axis=0), _BASE_BLOCK_PX, axis=1)
    return np.ascontiguousarray(base[: spec.height, : spec.width])


def _kernels(spec: SceneSpec) -> list[_Kernel]:
    rng = np.random.default_rng([spec.seed, 1])
    kernels = []
    for _ in range(spec.urban_seeds):
        kernels.append(
            _Kernel(
                x=int(rng.integers(0, spec.width)),
                y=int(rng.integers(0, spec.height)),
                direction=int(rng.integers(0, 4)),
                thickness=int(rng.integers(24, 49)),
                length=int(rng.integers(30, 81)),
                # heterogeneous growth speeds: the nominal rate is the mean
                rate=float(spec.growth_rate * rng.uniform(0.5, 1.5)),
            )
        )
    return kernels


def _stamp_kernel(labels: np.ndarray, k: _Kernel, year_index: int) -> None:
    advance = int(round(k.rate * year_index))
    reach = k.length + advance
    if k.direction == 0:
        x0, x1, y0, y1 = k.x, k.x + reach, k.y, k.y + k.thickness
    elif k.direction == 1:
        x0, x1, y0, y1 = k.x - reach, k.x, k.y, k.y + k.thickness
    elif k.direction == 2:
        x0, x1, y0, y1 = k.x, k.x + k.thickness, k.y - reach, k.y
    else:
        x0, x1, y0, y1 = k.x, k.x + k.thickness, k.y + reach, k.y
    h, w = labels.shape
    labels[max(0, y0) : max(0, min(h, y1)), max(0, x0) : max(0, min(w, x1))] = BUILT


def _year_base(spec: SceneSpec, base: np.ndarray, kernels: list[_Kernel], year_index: int) -> np.ndarray:
    labels = base.copy()
    for k in kernels:
        _stamp_kernel(labels, k, year_index)
    return labels


def synth_scene(
    spec: SceneSpec, geotransform=IDENTITY_GEOTRANSFORM
) -> dict[int, list[tuple[datetime.date, RasterGrid]]]:
    """Per-year time series of label rasters, a pure function of (spec, seed).

    Each year gets one image per entry of SCENE_MONTH_DAYS. Winter images
    (when snow_months is set) show snow cover instead of the surface
    classes; every image carries independent random cloud gaps at
    cloud_gap_fraction.
    """
    base = _base_landscape(spec)
    kernels = _kernels(spec)
    out: dict[int, list[tuple[datetime.date, RasterGrid]]] = {}
    for year_index, year in enumerate(spec.years):
        year_labels = _year_base(spec, base, kernels, year_index)
        images = []
        for ts_index, (month, day) in enumerate(SCENE_MONTH_DAYS):
            labels = year_labels.copy()
            if spec.snow_months and month in SNOW_MONTHS:
                labels[:, :] = SNOW_AND_ICE
            if spec.cloud_gap_fraction > 0.0:
                rng = np.random.default_rng([spec.seed, 2, year_index, ts_index])
                gaps = rng.random(labels.shape) < spec.cloud_gap_fraction
                labels[gaps] = LABEL_NODATA
            images.append((datetime.date(year, month, day), label_raster(labels, geotransform)))
        out[year] = images
    return out


def scene_year_truth(spec: SceneSpec, year: int, geotransform=IDENTITY_GEOTRANSFORM) -> RasterGrid:
    """The gap-free, snow-free ground-truth label raster for one scene year."""
    if year not in spec.years:
        raise ValidationError(f"year {year} not in scene years {spec.years}")
    base = _base_landscape(spec)
    kernels = _kernels(spec)
    return label_raster(_year_base(spec, base, kernels, spec.years.index(year)), geotransform)
