"""Binary matrix container used for corpus features and model checkpoints.

Layout: 4 magic bytes, u32 rows, u32 cols (little-endian), then the
row-major payload. Magic ``D3GF`` carries 32-bit little-endian reals
(corpus features); magic ``D3GD`` carries 64-bit reals (checkpoints,
where round-trips must preserve every bit of the trained parameters).
"""

import struct

import numpy as np

MAGIC_F32 = b"D3GF"
MAGIC_F64 = b"D3GD"
_HEADER = struct.Struct("<4sII")


class MatrixIOError(Exception):
    """Base class for matrix container failures."""


class BadHeaderError(MatrixIOError):
    """Unknown magic bytes or an otherwise malformed header."""


class TruncatedFileError(MatrixIOError):
    """File ends before the payload announced by the header."""


def write_matrix(path, arr, dtype="f32"):
    """Write a 2-d array; dtype selects the f32 or f64 container variant."""
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError(f"write_matrix: expected 2-d array, got shape {arr.shape}")
    if dtype == "f32":
        magic, payload = MAGIC_F32, arr.astype("<f4")
    elif dtype == "f64":
        magic, payload = MAGIC_F64, arr.astype("<f8")
    else:
        raise ValueError(f"write_matrix: unknown dtype {dtype!r}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, arr.shape[0], arr.shape[1]))
        fh.write(payload.tobytes())


def read_matrix(path):
    """Read a matrix back as float64, validating header and payload size."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than header ({len(blob)} bytes)")
    magic, rows, cols = _HEADER.unpack_from(blob)
    if magic == MAGIC_F32:
        itemsize, dt = 4, "<f4"
    elif magic == MAGIC_F64:
        itemsize, dt = 8, "<f8"
    else:
        raise BadHeaderError(f"{path}: bad magic {magic!r}")
    want = rows * cols * itemsize
    got = len(blob) - _HEADER.size
    if got < want:
        raise TruncatedFileError(f"{path}: payload {got} bytes, header promises {want}")
    if got > want:
        raise BadHeaderError(f"{path}: {got - want} trailing bytes after payload")
    data = np.frombuffer(blob, dtype=dt, count=rows * cols, offset=_HEADER.size)
    return data.astype(np.float64).reshape(rows, cols)
