"""Mini-VGG classifier with pluggable suppression sites, plus the refiner.

Six convolutional stages (ReLU each, 2x2 max pooling after the first four)
feed a 1x1 convolution head with one channel per class.  Classification
scores are the sigmoid of globally averaged head features.  A suppression
site can be enabled after any stage's ReLU; the refiner is the same backbone
with every site disabled and its head output read directly as localization
maps.

Training is deterministic under the schedule seed: shuffling and per-sample
augmentation draw from seeds derived per epoch and sample index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import AugmentConfig, Sample, augment
from .engine import (
    Adam,
    SGD,
    ShapeError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    bce_loss,
    conv2d,
    decayed_lr,
    global_avg_pool,
    maxpool2d,
    mse_loss,
    relu,
    reshape,
    sigmoid,
)
from .engine.serialize import read_tensor, write_tensor
from .errors import NumericalError
from .seeding import derive_seed
from .suppression import DrsConfig, drs_forward

__all__ = ["NetworkConfig", "TrainSchedule", "MiniVgg", "localization_maps", "clamp01",
           "train_classifier", "train_refiner", "predict_scores", "predict_maps",
           "multi_label_accuracy", "save_checkpoint", "load_checkpoint"]

STAGES = 6
# stride 8 overall: feature maps keep enough resolution for objects to span
# several cells, matching the geometry the localization maps are read at
DOWNSAMPLED_STAGES = (0, 1, 2)


@dataclass
class NetworkConfig:
    classes: int = 4
    input_side: int = 64
    widths: tuple[int, ...] = (16, 32, 64, 64, 96, 96)
    kernel: int = 3
    drs_flags: tuple[bool, ...] = (False,) * STAGES
    drs_mode: str = "constant"
    drs_delta: float = 0.55

    def validate(self) -> None:
        if len(self.widths) != STAGES:
            raise ValueError(f"expected {STAGES} stage widths, got {len(self.widths)}")
        if len(self.drs_flags) != STAGES:
            raise ValueError(f"expected {STAGES} suppression flags, got {len(self.drs_flags)}")
        if self.classes < 1:
            raise ValueError(f"class count must be >= 1, got {self.classes}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.kernel}")
        if self.drs_mode not in ("constant", "learnable"):
            raise ValueError(f"unknown suppression mode {self.drs_mode!r}")
        if not 0.0 <= self.drs_delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.drs_delta}")


@dataclass
class TrainSchedule:
    optimizer: str = "sgd"
    lr: float = 1e-3
    decay_epochs: tuple[int, ...] = (5, 10)
    decay_factor: float = 0.1
    batch_size: int = 5
    epochs: int = 15
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def validate(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if any(d >= self.epochs or d < 0 for d in self.decay_epochs):
            raise ValueError(f"decay epochs {self.decay_epochs} must fall within {self.epochs} epochs")


def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    # sqrt(6/fan_in) keeps activation variance roughly constant through ReLU stages
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape).astype(np.float32)


class MiniVgg:
    """Backbone, head, and optional per-stage suppression sites."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        # Backbone and controllers draw from separate streams so toggling
        # suppression never shifts the backbone initialization.
        backbone_rng = np.random.default_rng(derive_seed(seed, "backbone"))
        controller_rng = np.random.default_rng(derive_seed(seed, "controllers"))
        self.stages: list[tuple[Tensor, Tensor]] = []
        in_ch = 3
        k = cfg.kernel
        for width in cfg.widths:
            weight = Tensor(_fan_in_uniform(backbone_rng, (width, in_ch, k, k), in_ch * k * k),
                            requires_grad=True)
            bias = Tensor(np.zeros(width, dtype=np.float32), requires_grad=True)
            self.stages.append((weight, bias))
            in_ch = width
        self.head_weight = Tensor(_fan_in_uniform(backbone_rng, (cfg.classes, in_ch, 1, 1), in_ch),
                                  requires_grad=True)
        self.head_bias = Tensor(np.zeros(cfg.classes, dtype=np.float32), requires_grad=True)
        self.sites: list[Optional[DrsConfig]] = []
        for i, flag in enumerate(cfg.drs_flags):
            if not flag:
                self.sites.append(None)
            elif cfg.drs_mode == "constant":
                self.sites.append(DrsConfig.constant(cfg.drs_delta))
            else:
                self.sites.append(DrsConfig.learnable(cfg.widths[i], controller_rng))

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, (weight, bias) in enumerate(self.stages):
            named.append((f"stage{i + 1}.weight", weight))
            named.append((f"stage{i + 1}.bias", bias))
        named.append(("head.weight", self.head_weight))
        named.append(("head.bias", self.head_bias))
        for i, site in enumerate(self.sites):
            if site is not None and site.mode == "learnable":
                named.append((f"drs{i + 1}.weight", site.weight))
                named.append((f"drs{i + 1}.bias", site.bias))
        return named

    def param_sites(self) -> dict[str, str]:
        return {name: name.split(".")[0] for name, _ in self.parameters()}

    def forward(self, images, suppression: bool = True) -> tuple[Tensor, Tensor]:
        """Head feature maps [N, C, h, w] and classification scores [N, C]."""
        x = as_tensor(images)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected [N, 3, H, W] images, got {x.shape}")
        pad = self.cfg.kernel // 2
        for i, (weight, bias) in enumerate(self.stages):
            x = relu(conv2d(x, weight, bias, stride=1, padding=pad))
            site = self.sites[i]
            if suppression and site is not None:
                x = drs_forward(x, site)
            if i in DOWNSAMPLED_STAGES:
                x = maxpool2d(x, 2, 2)
        features = conv2d(x, self.head_weight, self.head_bias)
        scores = sigmoid(reshape(global_avg_pool(features), (features.shape[0], self.cfg.classes)))
        return features, scores


def localization_maps(features: np.ndarray, present: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-class maps: ReLU of the feature map divided by its per-map maximum.

    Maps whose features are all non-positive come out as zeros.  When
    ``present`` is given, absent classes are zeroed as well.
    """
    features = np.asarray(features)
    rect = np.maximum(features, 0)
    peak = rect.max(axis=(2, 3), keepdims=True)
    maps = np.where(peak > 0, rect / np.where(peak > 0, peak, 1), 0).astype(np.float32)
    if present is not None:
        maps = maps * (np.asarray(present)[:, :, None, None] > 0)
    return maps


def clamp01(maps: np.ndarray) -> np.ndarray:
    """Export clamp for refiner outputs."""
    return np.clip(maps, 0.0, 1.0).astype(np.float32)


def _make_optimizer(params: Sequence[Tensor], sched: TrainSchedule):
    if sched.optimizer == "sgd":
        return SGD(params, sched.lr, momentum=sched.momentum, weight_decay=sched.weight_decay)
    return Adam(params, sched.lr, weight_decay=sched.weight_decay)


def _prepared(sample: Sample, aug: Optional[AugmentConfig], seed: int, epoch: int, index: int) -> Sample:
    if aug is None:
        return sample
    return augment(sample, aug, derive_seed(seed, "augment", epoch, int(index)))


def train_classifier(samples: Sequence[Sample], net: MiniVgg, sched: TrainSchedule,
                     aug: Optional[AugmentConfig] = None) -> list[float]:
    """Binary cross-entropy training; returns the per-epoch mean loss curve."""
    if not samples:
        raise ValueError("empty dataset")
    sched.validate()
    opt = _make_optimizer([p for _, p in net.parameters()], sched)
    curve = []
    for epoch in range(sched.epochs):
        opt.lr = decayed_lr(sched.lr, sched.decay_epochs, sched.decay_factor, epoch)
        order = np.random.default_rng(derive_seed(sched.seed, "shuffle", epoch)).permutation(len(samples))
        losses = []
        for start in range(0, len(order), sched.batch_size):
            chunk = order[start:start + sched.batch_size]
            batch = [_prepared(samples[i], aug, sched.seed, epoch, i) for i in chunk]
            images = np.stack([s.image for s in batch])
            labels = np.stack([s.labels for s in batch])
            with Tape() as tape:
                _, scores = net.forward(Tensor(images))
                loss = bce_loss(scores, Tensor(labels))
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericalError(f"classification loss is not finite at epoch {epoch}")
                backward(loss, tape)
            opt.step()
            opt.zero_grad()
            losses.append(value)
        curve.append(float(np.mean(losses)))
    return curve


def train_refiner(samples: Sequence[Sample], classifier: MiniVgg, refiner: MiniVgg,
                  sched: TrainSchedule, aug: Optional[AugmentConfig] = None) -> list[float]:
    """Regress the frozen classifier's localization maps with MSE.

    Targets are recomputed from the classifier every step, so augmentation
    applies identically to the input and the target path.
    """
    if not samples:
        raise ValueError("empty dataset")
    sched.validate()
    opt = _make_optimizer([p for _, p in refiner.parameters()], sched)
    curve = []
    for epoch in range(sched.epochs):
        opt.lr = decayed_lr(sched.lr, sched.decay_epochs, sched.decay_factor, epoch)
        order = np.random.default_rng(derive_seed(sched.seed, "shuffle", epoch)).permutation(len(samples))
        losses = []
        for start in range(0, len(order), sched.batch_size):
            chunk = order[start:start + sched.batch_size]
            batch = [_prepared(samples[i], aug, sched.seed, epoch, i) for i in chunk]
            images = np.stack([s.image for s in batch])
            labels = np.stack([s.labels for s in batch])
            features, _ = classifier.forward(Tensor(images))
            targets = localization_maps(features.data, labels)
            with Tape() as tape:
                refined, _ = refiner.forward(Tensor(images))
                loss = mse_loss(refined, Tensor(targets))
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericalError(f"refinement loss is not finite at epoch {epoch}")
                backward(loss, tape)
            opt.step()
            opt.zero_grad()
            losses.append(value)
        curve.append(float(np.mean(losses)))
    return curve


def predict_scores(net: MiniVgg, samples: Sequence[Sample], batch_size: int = 8) -> np.ndarray:
    """Classification scores for full (un-augmented) images."""
    scores = []
    for start in range(0, len(samples), batch_size):
        images = np.stack([s.image for s in samples[start:start + batch_size]])
        _, p = net.forward(Tensor(images))
        scores.append(p.data)
    return np.concatenate(scores, axis=0)


def predict_maps(net: MiniVgg, samples: Sequence[Sample], mode: str = "drs",
                 refiner: Optional[MiniVgg] = None, batch_size: int = 8) -> list[np.ndarray]:
    """Localization maps [C, h, w] per sample.

    ``raw`` disables suppression at inference, ``drs`` keeps it, ``refined``
    reads the refiner head directly (clamped to [0, 1] for export).
    """
    if mode not in ("raw", "drs", "refined"):
        raise ValueError(f"unknown map mode {mode!r}")
    if mode == "refined":
        if refiner is None:
            raise ValueError("refined maps require a refiner network")
        source, suppression = refiner, False
    else:
        source, suppression = net, mode == "drs"
    out: list[np.ndarray] = []
    for start in range(0, len(samples), batch_size):
        images = np.stack([s.image for s in samples[start:start + batch_size]])
        features, _ = source.forward(Tensor(images), suppression=suppression)
        if mode == "refined":
            maps = clamp01(features.data)
        else:
            maps = localization_maps(features.data)
        out.extend(maps[i] for i in range(maps.shape[0]))
    return out


def multi_label_accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    """Per-class exact-match ratio, averaged over samples."""
    predictions = np.asarray(scores) > threshold
    return float((predictions == (np.asarray(labels) > 0.5)).mean())


def save_checkpoint(path, net: MiniVgg) -> Path:
    """Directory of named binary tensors plus a name/shape/site manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    sites = net.param_sites()
    lines = []
    for name, tensor in net.parameters():
        write_tensor(path / f"{name}.drst", tensor.data)
        dims = ",".join(str(d) for d in tensor.shape)
        lines.append(f"{name} {dims} {sites[name]}")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path, cfg: NetworkConfig, seed: int = 0) -> MiniVgg:
    """Rebuild a network from ``cfg`` and fill its parameters from disk."""
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest}")
    net = MiniVgg(cfg, seed=seed)
    params = dict(net.parameters())
    stored = {}
    for line in manifest.read_text().splitlines():
        name, dims, _site = line.split()
        stored[name] = tuple(int(d) for d in dims.split(","))
    if set(stored) != set(params):
        raise ValueError(f"checkpoint parameters {sorted(stored)} do not match network {sorted(params)}")
    for name, tensor in params.items():
        arr = read_tensor(path / f"{name}.drst")
        if arr.shape != tensor.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != network shape {tensor.shape}")
        tensor.data = arr
    return net
