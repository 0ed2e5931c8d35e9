"""Checkpoint file format "ECEN".

Layout: magic ``ECEN``, u32 version (1), u32 step, u32 parameter count, then
one record per parameter (u16 name length, name bytes, u8 rank, rank x u32
extents, float32 little-endian data), then a u32 moment count and moment
records in the same layout, then a trailing u64 configuration hash.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"ECEN"
VERSION = 1


@dataclass
class Checkpoint:
    step: int
    parameters: dict      # name -> float32 ndarray
    moments: dict         # name -> float32 ndarray
    config_hash: int


def _write_record(fh, name: str, array: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.asarray(array, dtype="<f4")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_record(blob: bytes, offset: int):
    (name_len,) = struct.unpack_from("<H", blob, offset)
    offset += 2
    name = blob[offset:offset + name_len].decode("utf-8")
    offset += name_len
    (rank,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    shape = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    offset += 4 * count
    return name, data.reshape(shape).astype(np.float32), offset


def save_checkpoint(path, step: int, parameters, moments, config_hash: int) -> None:
    """``parameters`` and ``moments`` are iterables of (name, array)."""
    parameters = list(parameters)
    moments = list(moments)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, step, len(parameters)))
        for name, arr in parameters:
            _write_record(fh, name, arr)
        fh.write(struct.pack("<I", len(moments)))
        for name, arr in moments:
            _write_record(fh, name, arr)
        fh.write(struct.pack("<Q", config_hash & 0xFFFFFFFFFFFFFFFF))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not an ECEN checkpoint")
    version, step, n_params = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    try:
        parameters = {}
        for _ in range(n_params):
            name, arr, offset = _read_record(blob, offset)
            parameters[name] = arr
        (n_moments,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        moments = {}
        for _ in range(n_moments):
            name, arr, offset = _read_record(blob, offset)
            moments[name] = arr
        (config_hash,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
    except struct.error as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    return Checkpoint(step=step, parameters=parameters, moments=moments,
                      config_hash=config_hash)
