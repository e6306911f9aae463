"""ATNS tensor files, PGM export and JSON helpers.

ATNS layout, all integers little-endian::

    b"ATNS" | u32 version (=1) | u8 dtype | u8 ndim | ndim x u64 dims | payload

dtype 1 is float32, dtype 2 is uint8; the payload is row-major.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFile, NotATensorFile, ShapeMismatch, UnsupportedDtype

MAGIC = b"ATNS"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1")}
DTYPE_CODES = {np.dtype("=f4"): 1, np.dtype("=u1"): 2}


def encode_tensor(arr):
    arr = np.asarray(arr)
    code = DTYPE_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise UnsupportedDtype(f"cannot store dtype {arr.dtype}; use float32 or uint8")
    if arr.ndim > 255:
        raise ShapeMismatch("too many dimensions")
    header = MAGIC + struct.pack("<IBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    return header + payload


def decode_tensor(data):
    if len(data) < 4 or data[:4] != MAGIC:
        raise NotATensorFile("missing ATNS magic")
    if len(data) < 10:
        raise CorruptFile("truncated header")
    version, code, ndim = struct.unpack_from("<IBB", data, 4)
    if version != VERSION:
        raise CorruptFile(f"unsupported version {version}")
    if code not in DTYPES:
        raise UnsupportedDtype(f"unknown dtype code {code}")
    offset = 10 + 8 * ndim
    if len(data) < offset:
        raise CorruptFile("truncated dimension table")
    dims = struct.unpack_from(f"<{ndim}Q", data, 10)
    dtype = DTYPES[code]
    expected = int(np.prod(dims, dtype=object)) * dtype.itemsize
    if len(data) - offset != expected:
        raise CorruptFile(f"payload has {len(data) - offset} bytes, header implies {expected}")
    arr = np.frombuffer(data, dtype=dtype, offset=offset, count=expected // dtype.itemsize)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path, arr):
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


def to_pgm_bytes(grid):
    """Bool masks map to 0/255; real grids map [0, 1] linearly with round-half-up."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ShapeMismatch(f"PGM needs a 2-D array, got {grid.shape}")
    h, w = grid.shape
    if h > 65535 or w > 65535:
        raise ShapeMismatch("PGM dimensions are limited to 65535")
    if grid.dtype == bool:
        pixels = np.where(grid, 255, 0).astype(np.uint8)
    elif grid.dtype == np.uint8:
        pixels = grid
    else:
        pixels = np.floor(np.clip(grid.astype(np.float64), 0.0, 1.0) * 255 + 0.5).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def export_pgm(grid, path):
    Path(path).write_bytes(to_pgm_bytes(grid))


def read_pgm(path):
    """Read a binary P5 image with maxval 255 as a uint8 array."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptFile("truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5" or fields[3] != b"255":
        raise CorruptFile("only binary PGM with maxval 255 is supported")
    w, h = int(fields[1]), int(fields[2])
    pixels = data[pos + 1 :]
    if len(pixels) != w * h:
        raise CorruptFile(f"PGM payload has {len(pixels)} bytes, expected {w * h}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
