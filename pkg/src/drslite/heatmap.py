"""Heatmap export with a fixed blue-to-red colormap.

The 256-entry table is built from integer arithmetic only, so heatmap files
are bit-identical across platforms and runs and can serve as golden files.
"""

from __future__ import annotations

import numpy as np

from .labeling import upsample_bilinear
from .pnm import write_ppm

__all__ = ["BLUE_RED_TABLE", "colorize", "write_heatmap"]


def _build_table() -> np.ndarray:
    table = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        if i < 85:                       # blue -> cyan
            r, g, b = 0, 3 * i, 255
        elif i < 170:                    # cyan -> yellow
            j = i - 85
            r, g, b = 3 * j, 255, 255 - 3 * j
        else:                            # yellow -> red
            j = i - 170
            r, g, b = 255, max(0, 255 - 3 * j), 0
        table[i] = (r, g, b)
    return table


BLUE_RED_TABLE = _build_table()


def colorize(values: np.ndarray) -> np.ndarray:
    """Map [H, W] values in [0, 1] onto the table; 0 hits the floor color."""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    idx = np.minimum((values * 256.0).astype(np.int64), 255)
    return BLUE_RED_TABLE[idx]


def write_heatmap(path, values: np.ndarray, side: int | None = None) -> None:
    """Colorize a localization map, optionally upsampled to image geometry."""
    values = np.asarray(values)
    if side is not None and values.shape != (side, side):
        values = upsample_bilinear(values, side, side)
    write_ppm(path, colorize(values))
