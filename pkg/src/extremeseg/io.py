"""VOL1 file format for volumes (f32) and masks (u8).

Layout: the 4 bytes ``VOL1``, one UTF-8 JSON header line terminated by ``\\n``
with keys ``dims``, ``spacing``, ``dtype`` (``"f32le"`` or ``"u8"``) and
``order`` (always ``"x-fastest"``), then exactly ``nx*ny*nz`` little-endian
elements.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import BadMagic, HeaderMismatch
from .volume import Volume3D, check_mask

MAGIC = b"VOL1"
_DTYPES = {"f32le": np.dtype("<f4"), "u8": np.dtype("u1")}


def _write(path, arr: np.ndarray, spacing, dtype_key: str) -> None:
    header = {
        "dims": [int(n) for n in arr.shape],
        "spacing": [float(s) for s in spacing],
        "dtype": dtype_key,
        "order": "x-fastest",
    }
    payload = np.asarray(arr, dtype=_DTYPES[dtype_key]).ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload)


def _read(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {raw[:4]!r}")
    end = raw.find(b"\n", 4)
    if end < 0:
        raise HeaderMismatch(f"{path}: header line is not terminated")
    try:
        header = json.loads(raw[4:end].decode("utf-8"))
        dims = tuple(int(n) for n in header["dims"])
        spacing = tuple(float(s) for s in header["spacing"])
        dtype = _DTYPES[header["dtype"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise HeaderMismatch(f"{path}: malformed header ({exc})") from exc
    if header.get("order", "x-fastest") != "x-fastest" or len(dims) != 3:
        raise HeaderMismatch(f"{path}: unsupported layout {header}")
    payload = raw[end + 1:]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise HeaderMismatch(f"{path}: header declares {expected} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    return data, spacing, header["dtype"]


def write_volume(v: Volume3D, path) -> None:
    _write(path, v.data, v.spacing, "f32le")


def read_volume(path) -> Volume3D:
    data, spacing, kind = _read(path)
    if kind != "f32le":
        raise HeaderMismatch(f"{path}: expected f32le volume, found {kind}")
    return Volume3D(data.astype(np.float32), spacing)


def write_mask(m, path, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a binary or trinary mask as u8."""
    _write(path, check_mask(m, allowed=(0, 1, 2)), spacing, "u8")


def write_u8(arr, path, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write any uint8 raster (e.g. an inspection overlay) as a VOL1 u8 file."""
    _write(path, np.asarray(arr, dtype=np.uint8), spacing, "u8")


def read_mask(path) -> np.ndarray:
    data, _, kind = _read(path)
    if kind != "u8":
        raise HeaderMismatch(f"{path}: expected u8 mask, found {kind}")
    return data.astype(np.uint8)


def read_mask_spacing(path):
    """Return ``(mask, spacing)``."""
    data, spacing, kind = _read(path)
    if kind != "u8":
        raise HeaderMismatch(f"{path}: expected u8 mask, found {kind}")
    return data.astype(np.uint8), spacing
