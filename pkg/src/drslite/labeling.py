"""Pseudo segmentation labels from localization maps plus saliency, and metrics.

Label encoding everywhere: 0 is background, class ``c`` (0-based) maps to
pixel value ``c + 1``, and 255 marks ignored pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["IGNORE", "CueConfig", "upsample_bilinear", "generate_pseudo_label",
           "miou", "object_coverage"]

IGNORE = 255


@dataclass
class CueConfig:
    """Object-cue threshold on localization maps, background-cue threshold on saliency."""

    alpha: float = 0.2
    beta: float = 0.06

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")


def _axis_weights(out_size: int, in_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # align_corners=False source coordinates, clamped to the valid range
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, (src - lo)


def upsample_bilinear(maps: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear upsampling (align_corners=False) of [h, w] or [C, h, w] maps."""
    maps = np.asarray(maps)
    squeeze = maps.ndim == 2
    if squeeze:
        maps = maps[None]
    if maps.ndim != 3:
        raise ValueError(f"expected [h, w] or [C, h, w] maps, got shape {maps.shape}")
    h, w = maps.shape[1:]
    if height < h or width < w:
        raise ValueError(f"downscaling {h}x{w} -> {height}x{width} is not supported")
    y0, y1, wy = _axis_weights(height, h)
    x0, x1, wx = _axis_weights(width, w)
    wy = wy[None, :, None]
    wx = wx[None, None, :]
    top = maps[:, y0][:, :, x0] * (1 - wx) + maps[:, y0][:, :, x1] * wx
    bottom = maps[:, y1][:, :, x0] * (1 - wx) + maps[:, y1][:, :, x1] * wx
    out = (top * (1 - wy) + bottom * wy).astype(maps.dtype, copy=False)
    return out[0] if squeeze else out


def generate_pseudo_label(maps: np.ndarray, present: np.ndarray, saliency: np.ndarray,
                          cfg: CueConfig) -> np.ndarray:
    """Per-pixel rules, in order of precedence.

    1. Some present class scores above ``alpha``: assign the highest-scoring
       such class (lowest index on exact ties).
    2. Otherwise, saliency below ``beta``: background.
    3. Otherwise: ignore.

    Args:
        maps: [C, H, W] localization maps in [0, 1], already at image geometry.
        present: [C] multi-hot image-level labels.
        saliency: [H, W] class-agnostic foreground scores in [0, 1].

    Returns:
        uint8 [H, W] label image (0 background, c+1 objects, 255 ignore).
    """
    maps = np.asarray(maps)
    present = np.asarray(present)
    saliency = np.asarray(saliency)
    if maps.ndim != 3 or maps.shape[0] != present.shape[0]:
        raise ValueError(f"maps {maps.shape} do not match {present.shape[0]} classes")
    if maps.shape[1:] != saliency.shape:
        raise ValueError(f"maps {maps.shape[1:]} and saliency {saliency.shape} geometry differ")
    masked = maps * (present > 0)[:, None, None]
    above = masked > cfg.alpha
    object_cue = above.any(axis=0)
    scores = np.where(above, masked, -1.0)
    winner = scores.argmax(axis=0).astype(np.uint8) + 1
    label = np.where(object_cue, winner,
                     np.where(saliency < cfg.beta, 0, IGNORE)).astype(np.uint8)
    return label


def miou(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray],
         num_classes: int) -> tuple[np.ndarray, float]:
    """Dataset-level intersection-over-union per class and its mean.

    Pixels whose ground truth is 255 are excluded from both intersection and
    union.  Classes with an empty union get IoU NaN and are excluded from the
    mean.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    inter = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} geometry differ")
        valid = gt != IGNORE
        for k in range(num_classes):
            pk = (pred == k) & valid
            gk = (gt == k) & valid
            inter[k] += np.count_nonzero(pk & gk)
            union[k] += np.count_nonzero(pk | gk)
    per_class = np.full(num_classes, np.nan)
    nonempty = union > 0
    per_class[nonempty] = inter[nonempty] / union[nonempty]
    mean = float(per_class[nonempty].mean()) if nonempty.any() else float("nan")
    return per_class, mean


def object_coverage(m: np.ndarray, object_mask: np.ndarray, threshold: float) -> float:
    """Fraction of object pixels whose localization value exceeds ``threshold``.

    Returns NaN when the object mask is empty.
    """
    m = np.asarray(m)
    object_mask = np.asarray(object_mask, dtype=bool)
    if m.shape != object_mask.shape:
        raise ValueError(f"map {m.shape} and mask {object_mask.shape} geometry differ")
    total = np.count_nonzero(object_mask)
    if total == 0:
        return float("nan")
    return float(np.count_nonzero(m[object_mask] > threshold) / total)
