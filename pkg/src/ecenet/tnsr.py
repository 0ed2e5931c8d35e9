"""Raw tensor file format "TNSR".

Layout: magic ``TNSR``, u8 version (1), u8 rank, rank x u32 little-endian
extents, then product(extents) little-endian float32 values in row-major
order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"TNSR"
VERSION = 1


def write_tnsr(path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim > 255:
        raise DataError(f"TNSR rank limit is 255, got {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_tnsr(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not a TNSR file")
    version, rank = struct.unpack_from("<BB", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported TNSR version {version}")
    offset = 6
    if len(blob) < offset + 4 * rank:
        raise DataError(f"{path}: truncated TNSR header")
    shape = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    expected = offset + 4 * count
    if len(blob) != expected:
        raise DataError(
            f"{path}: payload is {len(blob) - offset} bytes, expected {4 * count}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return data.reshape(shape).astype(np.float32)
