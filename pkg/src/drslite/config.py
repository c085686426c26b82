"""Experiment configuration: flat ``section.key=value`` text files.

One file describes a whole pipeline run: dataset parameters, network layout,
both training schedules, augmentation, cue thresholds, the output directory,
and the master seed.  All derived seeds (dataset, training, augmentation)
come from the master seed, so a config plus a seed pins every output bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .dataset import AugmentConfig
from .errors import UsageError
from .labeling import CueConfig
from .networks import NetworkConfig, TrainSchedule
from .seeding import derive_seed

__all__ = ["ExperimentConfig", "default_config", "load_config", "dumps_config", "save_config"]


@dataclass
class ExperimentConfig:
    seed: int = 7
    out: str = "runs/default"
    data_n: int = 200
    data_classes: int = 4
    data_side: int = 64
    train_frac: float = 0.8
    net: NetworkConfig = field(default_factory=NetworkConfig)
    cls: TrainSchedule = field(default_factory=TrainSchedule)
    refine: TrainSchedule = field(default_factory=lambda: TrainSchedule(
        optimizer="adam", lr=1e-4, weight_decay=0.0))
    aug: Optional[AugmentConfig] = None
    cues: CueConfig = field(default_factory=CueConfig)

    def finalize(self) -> "ExperimentConfig":
        """Resolve derived fields: schedule seeds and the default crop side."""
        aug = self.aug
        if aug is None:
            aug = AugmentConfig(crop=max(32, int(self.data_side * 0.8)))
        cfg = replace(self, aug=aug)
        cfg.cls = replace(cfg.cls, seed=derive_seed(cfg.seed, "train-cls"))
        cfg.refine = replace(cfg.refine, seed=derive_seed(cfg.seed, "train-refine"))
        cfg.net.validate()
        cfg.cls.validate()
        cfg.refine.validate()
        if not 1 <= cfg.data_n:
            raise UsageError(f"data.n must be positive, got {cfg.data_n}")
        if not 0.0 < cfg.train_frac <= 1.0:
            raise UsageError(f"data.train_frac must be in (0, 1], got {cfg.train_frac}")
        return cfg

    @property
    def data_seed(self) -> int:
        return derive_seed(self.seed, "dataset")

    def split(self, count: int) -> tuple[range, range]:
        """Train/held-out index ranges for a dataset of ``count`` samples."""
        cut = max(1, int(count * self.train_frac))
        return range(0, cut), range(cut, count)


def default_config() -> ExperimentConfig:
    return ExperimentConfig().finalize()


def _parse_bool_flags(text: str) -> tuple[bool, ...]:
    if not all(ch in "01" for ch in text):
        raise ValueError(f"flags must be a bit string, got {text!r}")
    return tuple(ch == "1" for ch in text)


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(v) for v in text.split(","))


def dumps_config(cfg: ExperimentConfig) -> str:
    flags = "".join("1" if f else "0" for f in cfg.net.drs_flags)
    lines = [
        f"seed={cfg.seed}",
        f"out={cfg.out}",
        f"data.n={cfg.data_n}",
        f"data.classes={cfg.data_classes}",
        f"data.side={cfg.data_side}",
        f"data.train_frac={cfg.train_frac}",
        f"net.widths={','.join(str(w) for w in cfg.net.widths)}",
        f"net.kernel={cfg.net.kernel}",
        f"net.drs_flags={flags}",
        f"net.drs_mode={cfg.net.drs_mode}",
        f"net.drs_delta={cfg.net.drs_delta}",
    ]
    for prefix, sched in (("cls", cfg.cls), ("refine", cfg.refine)):
        lines += [
            f"{prefix}.optimizer={sched.optimizer}",
            f"{prefix}.lr={sched.lr}",
            f"{prefix}.decay_epochs={','.join(str(d) for d in sched.decay_epochs)}",
            f"{prefix}.decay_factor={sched.decay_factor}",
            f"{prefix}.batch={sched.batch_size}",
            f"{prefix}.epochs={sched.epochs}",
            f"{prefix}.momentum={sched.momentum}",
            f"{prefix}.weight_decay={sched.weight_decay}",
        ]
    aug = cfg.aug if cfg.aug is not None else AugmentConfig(crop=max(32, int(cfg.data_side * 0.8)))
    lines += [
        f"aug.crop={aug.crop}",
        f"aug.flip_prob={aug.flip_prob}",
        f"aug.brightness={aug.brightness}",
        f"aug.contrast={aug.contrast}",
        f"aug.saturation={aug.saturation}",
        f"cue.alpha={cfg.cues.alpha}",
        f"cue.beta={cfg.cues.beta}",
    ]
    return "\n".join(lines) + "\n"


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(dumps_config(cfg))


def _apply(cfg: ExperimentConfig, key: str, value: str) -> None:
    net, cls, ref = cfg.net, cfg.cls, cfg.refine
    aug = cfg.aug
    try:
        if key == "seed":
            cfg.seed = int(value)
        elif key == "out":
            cfg.out = value
        elif key == "data.n":
            cfg.data_n = int(value)
        elif key == "data.classes":
            cfg.data_classes = int(value)
            cfg.net.classes = int(value)
        elif key == "data.side":
            cfg.data_side = int(value)
            cfg.net.input_side = int(value)
        elif key == "data.train_frac":
            cfg.train_frac = float(value)
        elif key == "net.widths":
            net.widths = _parse_int_tuple(value)
        elif key == "net.kernel":
            net.kernel = int(value)
        elif key == "net.drs_flags":
            net.drs_flags = _parse_bool_flags(value)
        elif key == "net.drs_mode":
            net.drs_mode = value
        elif key == "net.drs_delta":
            net.drs_delta = float(value)
        elif key.startswith(("cls.", "refine.")):
            prefix, name = key.split(".", 1)
            sched = cls if prefix == "cls" else ref
            if name == "optimizer":
                sched.optimizer = value
            elif name == "lr":
                sched.lr = float(value)
            elif name == "decay_epochs":
                sched.decay_epochs = _parse_int_tuple(value)
            elif name == "decay_factor":
                sched.decay_factor = float(value)
            elif name == "batch":
                sched.batch_size = int(value)
            elif name == "epochs":
                sched.epochs = int(value)
            elif name == "momentum":
                sched.momentum = float(value)
            elif name == "weight_decay":
                sched.weight_decay = float(value)
            else:
                raise UsageError(f"unknown config key {key!r}")
        elif key.startswith("aug."):
            if aug is None:
                aug = AugmentConfig(crop=max(32, int(cfg.data_side * 0.8)))
                cfg.aug = aug
            name = key.split(".", 1)[1]
            if name == "crop":
                aug.crop = int(value)
            elif name == "flip_prob":
                aug.flip_prob = float(value)
            elif name in ("brightness", "contrast", "saturation"):
                setattr(aug, name, float(value))
            else:
                raise UsageError(f"unknown config key {key!r}")
        elif key == "cue.alpha":
            cfg.cues = CueConfig(alpha=float(value), beta=cfg.cues.beta)
        elif key == "cue.beta":
            cfg.cues = CueConfig(alpha=cfg.cues.alpha, beta=float(value))
        else:
            raise UsageError(f"unknown config key {key!r}")
    except (ValueError, TypeError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"bad value for {key!r}: {value!r} ({exc})") from None


def load_config(path=None, *, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    """Parse a config file; ``seed`` and ``out`` override the file's values."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file {path} does not exist")
        for lineno, raw in enumerate(path.read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            _apply(cfg, key.strip(), value.strip())
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    try:
        return cfg.finalize()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
