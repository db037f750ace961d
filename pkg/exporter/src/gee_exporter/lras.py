"""Writer for the pipeline's LRAS raster format.

Little-endian 76-byte header (magic, version, flags, width, height, bands,
dtype code, reserved, 6-value geotransform, nodata) followed by the samples
band-major, row-major. dtype 0 is uint8 labels with nodata 255, dtype 1 is
float32 with NaN nodata.
"""

import datetime
import json
import pathlib
import struct

import numpy as np

from .errors import FormatError, ValidationError

HEADER_FMT = "<4sHHIIHBB6dd"
HEADER_SIZE = struct.calcsize(HEADER_FMT)
MAGIC = b"LRAS"
LABEL_NODATA = 255

DTYPE_CODES = {"u8": 0, "f32": 1}


def write_lras(path, data: np.ndarray, geotransform) -> None:
    """Serialize a (bands, height, width) uint8 or float32 array."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[None, :, :]
    if data.ndim != 3:
        raise ValidationError(f"raster data must be (bands, height, width), got {data.shape}")
    if data.dtype == np.uint8:
        code, nodata, payload = DTYPE_CODES["u8"], float(LABEL_NODATA), data.tobytes()
    elif data.dtype == np.float32:
        code, nodata = DTYPE_CODES["f32"], float("nan")
        payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    else:
        raise ValidationError(f"unsupported sample dtype {data.dtype}")
    gt = tuple(float(v) for v in geotransform)
    if len(gt) != 6:
        raise ValidationError(f"geotransform must have 6 values, got {len(gt)}")
    bands, height, width = data.shape
    header = struct.pack(HEADER_FMT, MAGIC, 1, 0, width, height, bands, code, 0, *gt, nodata)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_lras(path) -> tuple[np.ndarray, tuple[float, ...]]:
    """Deserialize to ((bands, height, width) array, geotransform)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"file too short for header ({len(raw)} bytes)", offset=len(raw))
    magic, version, flags, width, height, bands, code, reserved, *rest = struct.unpack(
        HEADER_FMT, raw[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported version {version}", offset=4)
    if flags != 0 or reserved != 0:
        raise FormatError("unsupported flags", offset=6)
    np_dtype = {0: np.dtype(np.uint8), 1: np.dtype("<f4")}.get(code)
    if np_dtype is None:
        raise FormatError(f"unknown dtype code {code}", offset=18)
    if min(width, height, bands) < 1:
        raise FormatError(f"bad dimensions {bands} x {height} x {width}", offset=8)
    expected = width * height * bands * np_dtype.itemsize
    if len(raw) - HEADER_SIZE != expected:
        raise FormatError(
            f"payload is {len(raw) - HEADER_SIZE} bytes, expected {expected}", offset=HEADER_SIZE
        )
    data = np.frombuffer(raw, dtype=np_dtype, count=width * height * bands, offset=HEADER_SIZE)
    return data.reshape(bands, height, width).copy(), tuple(rest[:6])


def sidecar_path(lras_path) -> pathlib.Path:
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
