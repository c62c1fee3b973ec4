"""Reader/writer for the DRNF feature file format.

Layout (little-endian, no padding)::

    b"DRNF" | version: u8 = 1 | rows: u32 | cols: u32 | rows*cols f32, row-major
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DRNF"
VERSION = 1
_HEADER = struct.Struct("<4sBII")


class FeatureFormatError(ValueError):
    pass


def encode_features(matrix) -> bytes:
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise FeatureFormatError(f"expected a 2-D matrix, got shape {arr.shape}")
    rows, cols = arr.shape
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + body


def decode_features(blob: bytes, source="<bytes>") -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise FeatureFormatError(f"{source}: truncated header ({len(blob)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FeatureFormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{source}: unsupported version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise FeatureFormatError(
            f"{source}: size {len(blob)} does not match header ({rows}x{cols} -> {expected} bytes)"
        )
    arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return arr.reshape(rows, cols).astype(np.float32)


def read_features(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    return decode_features(path.read_bytes(), source=str(path))


def write_features(path, matrix) -> str:
    """Write ``matrix`` to ``path``; returns the sha256 of the written bytes."""
    blob = encode_features(matrix)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()
