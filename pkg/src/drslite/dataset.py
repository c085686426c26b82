"""Synthetic multi-label dataset with ground-truth masks and oracle saliency.

Each image holds one or two textured geometric objects on a textured neutral
background.  A class is a shape/color-family combination (at most 8 classes:
4 shapes x 2 families).  Objects carry a small high-saturation "core" patch,
so a classifier can succeed from a sub-region alone; that is what makes raw
localization maps sparse and gives suppression something to recover.

Masks encode 0 for background and ``c + 1`` for class ``c``; 255 is reserved
for ignored pixels.  Saliency is the smoothed foreground indicator plus
seeded noise of amplitude 0.1.  Images are quantized to 8 bits at generation
time so the PPM/PGM directory round-trips bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .labeling import upsample_bilinear
from .pnm import PnmError, read_pgm, read_ppm, write_pgm, write_ppm
from .seeding import derive_seed

__all__ = ["Sample", "AugmentConfig", "class_names", "expected_class_frequency",
           "gen_toy_dataset", "labels_from_mask", "augment", "crop_sample",
           "flip_sample", "write_dataset", "read_dataset"]

_SHAPES = ("square", "circle", "triangle", "cross")
_FAMILIES = ("warm", "cool")
# each shape is rendered with its own stripe orientation, so shape identity is
# readable from local texture as well as from the outline
_ORIENTATIONS = {"square": 0.0, "circle": np.pi / 2, "triangle": np.pi / 4, "cross": 3 * np.pi / 4}


@dataclass
class Sample:
    """One image with image-level labels, ground-truth mask, and saliency."""

    image: np.ndarray      # float32 [3, H, W] in [0, 1]
    labels: np.ndarray     # float32 [C] multi-hot
    gt_mask: np.ndarray    # uint8 [H, W]: 0 bg, c+1 objects, 255 ignore
    saliency: np.ndarray   # float32 [H, W] in [0, 1]


@dataclass
class AugmentConfig:
    """Random crop, horizontal flip, and color jitter amplitudes."""

    crop: int
    flip_prob: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2

    def __post_init__(self):
        if self.crop < 1:
            raise ValueError(f"crop side must be positive, got {self.crop}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip probability must be in [0, 1], got {self.flip_prob}")


def class_names(classes: int) -> list[str]:
    """Stable names, e.g. warm-square, cool-square, warm-circle, ..."""
    names = []
    for k in range(classes):
        shape = _SHAPES[k // len(_FAMILIES)]
        family = _FAMILIES[k % len(_FAMILIES)]
        names.append(f"{family}-{shape}")
    return names


def expected_class_frequency(classes: int) -> float:
    """Probability that a given class appears in a generated image."""
    # half the images hold 1 object, half hold 2, classes drawn without replacement
    return 0.5 * (1 / classes) + 0.5 * (min(2, classes) / classes)


def labels_from_mask(mask: np.ndarray, classes: int) -> np.ndarray:
    """Multi-hot vector: class c is present iff some pixel equals c + 1."""
    labels = np.zeros(classes, dtype=np.float32)
    values = np.unique(mask)
    for c in range(classes):
        if c + 1 in values:
            labels[c] = 1.0
    return labels


def _smooth_noise(rng: np.random.Generator, side: int, cell: int) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, (max(2, side // cell + 1),) * 2)
    return upsample_bilinear(coarse, side, side)


def _blur_axis(field: np.ndarray, radius: int, axis: int) -> np.ndarray:
    size = 2 * radius + 1
    pads = [(radius, radius) if a == axis else (0, 0) for a in range(field.ndim)]
    padded = np.pad(field, pads, mode="edge")
    csum = np.cumsum(padded, axis=axis)
    zero = np.zeros_like(np.take(csum, [0], axis=axis))
    csum = np.concatenate([zero, csum], axis=axis)
    length = padded.shape[axis]
    upper = np.take(csum, np.arange(size, length + 1), axis=axis)
    lower = np.take(csum, np.arange(0, length + 1 - size), axis=axis)
    return (upper - lower) / size


def _box_blur(field: np.ndarray, radius: int, passes: int = 2) -> np.ndarray:
    out = field.astype(np.float64)
    for _ in range(passes):
        out = _blur_axis(_blur_axis(out, radius, 0), radius, 1)
    return out


def _shape_mask(kind: str, cy: float, cx: float, r: float, side: int) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "circle":
        return dy * dy + dx * dx <= r * r
    if kind == "triangle":
        t = (dy + r) / (1.7 * r)
        return (t >= 0) & (t <= 1) & (np.abs(dx) <= t * 0.95 * r)
    if kind == "cross":
        return ((np.abs(dx) <= 0.35 * r) & (np.abs(dy) <= r)) | \
               ((np.abs(dy) <= 0.35 * r) & (np.abs(dx) <= r))
    raise ValueError(f"unknown shape kind {kind!r}")


def _base_color(family: str, rng: np.random.Generator) -> np.ndarray:
    if family == "warm":
        return np.array([0.70 + 0.15 * rng.random(),
                         0.30 + 0.12 * rng.random(),
                         0.10 + 0.08 * rng.random()])
    return np.array([0.10 + 0.08 * rng.random(),
                     0.34 + 0.12 * rng.random(),
                     0.70 + 0.15 * rng.random()])


# stripe color axes: the two tones a family's stripes alternate between,
# so one local texture patch pins down both family and orientation
_STRIPE_AXES = {"warm": np.array([0.30, -0.10, 0.0]), "cool": np.array([0.0, -0.10, 0.30])}
_STRIPE_PERIOD = 5.0
_AMP_FLOOR = 0.25   # stripe contrast far from the core
_AMP_PEAK = 0.75    # extra contrast at the core itself
_RADIUS_RANGE = (0.16, 0.26)


def _generate_sample(index: int, classes: int, side: int, seed: int) -> Sample:
    rng = np.random.default_rng(derive_seed(seed, "sample", index))

    # dark, lightly textured background, clearly separated from object colors
    gray = 0.16 + 0.08 * rng.random()
    tint = rng.uniform(-0.015, 0.015, 3)
    image = np.empty((3, side, side))
    coarse = _smooth_noise(rng, side, max(4, side // 8))
    fine = rng.uniform(-1.0, 1.0, (side, side))
    for ch in range(3):
        image[ch] = gray + tint[ch] + 0.04 * coarse + 0.015 * fine

    mask = np.zeros((side, side), dtype=np.uint8)
    count = 1 if rng.random() < 0.5 else 2
    count = min(count, classes)
    chosen = rng.choice(classes, size=count, replace=False)
    placed: list[tuple[float, float, float]] = []
    for cls in chosen:
        cls = int(cls)
        shape = _SHAPES[cls // len(_FAMILIES)]
        family = _FAMILIES[cls % len(_FAMILIES)]
        for _ in range(8):
            r = side * rng.uniform(*_RADIUS_RANGE)
            cy = rng.uniform(r + 1, side - r - 1)
            cx = rng.uniform(r + 1, side - r - 1)
            if all(np.hypot(cy - py, cx - px) > 0.9 * (r + pr) for py, px, pr in placed):
                break
        placed.append((cy, cx, r))
        inside = _shape_mask(shape, cy, cx, r, side)

        base = _base_color(family, rng)
        yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
        theta = rng.uniform(0, 2 * np.pi)
        shading = 1.0 + 0.12 * ((yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)) / r

        # stripe texture whose contrast peaks at an off-center core and fades
        # outward: the core is the object's most discriminative patch
        angle = _ORIENTATIONS[shape]
        coord = yy * np.cos(angle) + xx * np.sin(angle)
        stripes = np.sign(np.sin(2 * np.pi * coord / _STRIPE_PERIOD + rng.uniform(0, 2 * np.pi)))
        phi = rng.uniform(0, 2 * np.pi)
        core_cy = cy + 0.35 * r * np.sin(phi)
        core_cx = cx + 0.35 * r * np.cos(phi)
        dist2 = (yy - core_cy) ** 2 + (xx - core_cx) ** 2
        amplitude = _AMP_FLOOR + _AMP_PEAK * np.exp(-dist2 / (2 * (0.5 * r) ** 2))
        noise = 0.03 * rng.uniform(-1.0, 1.0, (side, side))
        axis = _STRIPE_AXES[family]
        for ch in range(3):
            values = base[ch] * (shading + noise) + amplitude * stripes * axis[ch]
            image[ch] = np.where(inside, values, image[ch])
        mask[inside] = cls + 1

    # oracle saliency: blurred foreground indicator plus seeded noise
    fg = (mask > 0).astype(np.float64)
    saliency = _box_blur(fg, max(1, side // 16), passes=2)
    saliency = saliency + rng.uniform(-0.1, 0.1, (side, side))

    image_u8 = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    sal_u8 = (np.clip(saliency, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    return Sample(
        image=image_u8.astype(np.float32) / 255.0,
        labels=labels_from_mask(mask, classes),
        gt_mask=mask,
        saliency=sal_u8.astype(np.float32) / 255.0,
    )


def gen_toy_dataset(n: int, classes: int, side: int, seed: int) -> list[Sample]:
    """Deterministic dataset of ``n`` samples; per-sample seeds are independent."""
    if n < 1:
        raise ValueError(f"sample count must be positive, got {n}")
    if not 1 <= classes <= 8:
        raise ValueError(f"class count must be in 1..8, got {classes}")
    if side < 32:
        raise ValueError(f"image side must be >= 32, got {side}")
    return [_generate_sample(i, classes, side, seed) for i in range(n)]


def crop_sample(sample: Sample, top: int, left: int, side: int) -> Sample:
    """Crop image, mask, and saliency identically; labels recomputed from the mask."""
    mask = sample.gt_mask[top:top + side, left:left + side]
    return Sample(
        image=sample.image[:, top:top + side, left:left + side].copy(),
        labels=labels_from_mask(mask, len(sample.labels)),
        gt_mask=mask.copy(),
        saliency=sample.saliency[top:top + side, left:left + side].copy(),
    )


def flip_sample(sample: Sample) -> Sample:
    """Horizontal flip of image, mask, and saliency."""
    return Sample(
        image=sample.image[:, :, ::-1].copy(),
        labels=sample.labels.copy(),
        gt_mask=sample.gt_mask[:, ::-1].copy(),
        saliency=sample.saliency[:, ::-1].copy(),
    )


def _reflect_pad(sample: Sample, target_h: int, target_w: int) -> Sample:
    h, w = sample.gt_mask.shape
    pad_h, pad_w = max(0, target_h - h), max(0, target_w - w)
    pads = ((0, pad_h), (0, pad_w))
    return Sample(
        image=np.pad(sample.image, ((0, 0),) + pads, mode="reflect"),
        labels=sample.labels,
        gt_mask=np.pad(sample.gt_mask, pads, mode="reflect"),
        saliency=np.pad(sample.saliency, pads, mode="reflect"),
    )


def augment(sample: Sample, cfg: AugmentConfig, seed: int) -> Sample:
    """Seeded crop + flip + color jitter; geometry is shared by all planes."""
    rng = np.random.default_rng(seed)
    h, w = sample.gt_mask.shape
    if cfg.crop > h or cfg.crop > w:
        sample = _reflect_pad(sample, cfg.crop, cfg.crop)
        h, w = sample.gt_mask.shape
    top = int(rng.integers(0, h - cfg.crop + 1))
    left = int(rng.integers(0, w - cfg.crop + 1))
    out = crop_sample(sample, top, left, cfg.crop)
    if cfg.flip_prob > 0 and rng.random() < cfg.flip_prob:
        out = flip_sample(out)

    image = out.image
    if cfg.brightness > 0:
        image = image * (1.0 + rng.uniform(-cfg.brightness, cfg.brightness))
    if cfg.contrast > 0:
        factor = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast)
        mean = image.mean()
        image = (image - mean) * factor + mean
    if cfg.saturation > 0:
        factor = 1.0 + rng.uniform(-cfg.saturation, cfg.saturation)
        luma = (0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2])[None]
        image = luma + (image - luma) * factor
    if image is not out.image:
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return replace(out, image=image)


def write_dataset(root, samples: list[Sample], *, seed: int, classes: int, side: int) -> Path:
    """Write images/, masks/, saliency/, labels.txt, and a manifest with the seed."""
    root = Path(root)
    for sub in ("images", "masks", "saliency"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        name = f"{i:04d}"
        rgb = (s.image * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
        write_ppm(root / "images" / f"{name}.ppm", rgb)
        write_pgm(root / "masks" / f"{name}.pgm", s.gt_mask)
        write_pgm(root / "saliency" / f"{name}.pgm",
                  (s.saliency * 255.0).round().astype(np.uint8))
        bits = "".join(str(int(v)) for v in s.labels)
        lines.append(f"{name} {bits}")
    (root / "labels.txt").write_text("\n".join(lines) + "\n")
    (root / "manifest.txt").write_text(
        f"n={len(samples)}\nclasses={classes}\nside={side}\nseed={seed}\n")
    return root


def read_dataset(root) -> tuple[list[Sample], dict[str, int]]:
    """Load a dataset directory; raises PnmError on geometry mismatches."""
    root = Path(root)
    manifest = {}
    for line in (root / "manifest.txt").read_text().splitlines():
        key, value = line.split("=", 1)
        manifest[key] = int(value)
    classes = manifest["classes"]
    samples = []
    for line in (root / "labels.txt").read_text().splitlines():
        name, bits = line.split()
        rgb = read_ppm(root / "images" / f"{name}.ppm")
        mask = read_pgm(root / "masks" / f"{name}.pgm")
        sal = read_pgm(root / "saliency" / f"{name}.pgm")
        if mask.shape != rgb.shape[:2] or sal.shape != rgb.shape[:2]:
            raise PnmError(f"{name}: mask/saliency geometry does not match the image")
        labels = np.array([float(b) for b in bits], dtype=np.float32)
        if len(labels) != classes:
            raise PnmError(f"{name}: expected {classes} label bits, found {len(labels)}")
        samples.append(Sample(
            image=rgb.astype(np.float32).transpose(2, 0, 1) / 255.0,
            labels=labels,
            gt_mask=mask,
            saliency=sal.astype(np.float32) / 255.0,
        ))
    return samples, manifest
