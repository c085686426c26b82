"""Binary tensor files used for checkpoints and localization-map dumps.

Layout: magic ``DRST``, u8 version (1), u8 ndim, ndim little-endian u32 dims,
then ``prod(dims)`` little-endian IEEE-754 float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["FormatError", "write_tensor", "read_tensor"]

MAGIC = b"DRST"
VERSION = 1


class FormatError(Exception):
    """Malformed binary tensor file."""


def write_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float32)
    if array.ndim < 1 or array.ndim > 255:
        raise FormatError(f"tensor rank {array.ndim} not storable")
    header = MAGIC + struct.pack("<BB", VERSION, array.ndim)
    header += b"".join(struct.pack("<I", d) for d in array.shape)
    Path(path).write_bytes(header + array.astype("<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a DRST tensor file")
    version, ndim = struct.unpack_from("<BB", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = 6
    if len(raw) < offset + 4 * ndim:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    count = int(np.prod(dims)) if dims else 0
    expected = offset + 4 * count
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return data.reshape(dims).astype(np.float32)
