"""Binary portable pixmap (P6) and graymap (P5) files.

The dataset stores images as 8-bit PPM, masks and saliency as 8-bit PGM.
These formats are dependency-free and round-trip bit-exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["PnmError", "write_ppm", "write_pgm", "read_ppm", "read_pgm", "load_saliency"]


class PnmError(Exception):
    """Malformed PPM/PGM file."""


def _parse_header(raw: bytes, path) -> tuple[bytes, int, int, int, int]:
    if len(raw) < 2 or raw[:1] != b"P":
        raise PnmError(f"{path}: not a PNM file")
    magic = raw[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise PnmError(f"{path}: malformed header")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise PnmError(f"{path}: unsupported geometry or maxval (only 8-bit handled)")
    return magic, width, height, maxval, pos


def _read(path, magic_wanted: bytes, channels: int) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    magic, width, height, maxval, offset = _parse_header(raw, path)
    if magic != magic_wanted:
        raise PnmError(f"{path}: expected {magic_wanted.decode()} file, found {magic.decode(errors='replace')}")
    count = width * height * channels
    if len(raw) - offset != count:
        raise PnmError(f"{path}: expected {count} raster bytes, found {len(raw) - offset}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return data.reshape(shape).copy(), maxval


def write_ppm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise PnmError(f"write_ppm: expected [H, W, 3] array, got {pixels.shape}")
    h, w = pixels.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + pixels.tobytes())


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise PnmError(f"write_pgm: expected [H, W] array, got {pixels.shape}")
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """8-bit RGB image as uint8 [H, W, 3]."""
    pixels, maxval = _read(path, b"P6", 3)
    if maxval != 255:
        raise PnmError(f"{path}: expected maxval 255, found {maxval}")
    return pixels


def read_pgm(path) -> np.ndarray:
    """8-bit grayscale image as uint8 [H, W]."""
    pixels, maxval = _read(path, b"P5", 1)
    if maxval != 255:
        raise PnmError(f"{path}: expected maxval 255, found {maxval}")
    return pixels


def load_saliency(path) -> np.ndarray:
    """Grayscale map scaled by its stated maxval to float32 in [0, 1]."""
    pixels, maxval = _read(path, b"P5", 1)
    return pixels.astype(np.float32) / np.float32(maxval)
