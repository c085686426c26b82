"""Command-line pipeline: data generation, training, map dumps, labels, eval.

Stages run sequentially and each checks that its prerequisite stage has left
its outputs in the run directory.  Every command is deterministic given the
same config and seed.  Exit codes: 0 success, 1 usage error, 2 missing
prerequisite stage, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataset as data_mod
from .config import ExperimentConfig, default_config, dumps_config, load_config
from .engine import EngineError, run_checks, standard_checks
from .engine.serialize import read_tensor, write_tensor
from .errors import MissingStageError, NumericalError, UsageError
from .figures import save_ablation_chart, save_iou_bars, save_loss_curve
from .heatmap import write_heatmap
from .labeling import generate_pseudo_label, miou, upsample_bilinear
from .networks import (
    MiniVgg,
    load_checkpoint,
    multi_label_accuracy,
    predict_maps,
    predict_scores,
    save_checkpoint,
    train_classifier,
    train_refiner,
)
from .pnm import read_pgm, write_pgm
from .suppression import gradcheck_specs

__all__ = ["main", "entry", "cmd_gen_data", "cmd_train_cls", "cmd_train_refine",
           "cmd_dump_cams", "cmd_gen_labels", "cmd_eval", "cmd_ablate", "cmd_gradcheck"]


def _root(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out)


def _dataset_dir(cfg) -> Path:
    return _root(cfg) / "dataset"


def _cls_dir(cfg) -> Path:
    return _root(cfg) / "cls"


def _refine_dir(cfg) -> Path:
    return _root(cfg) / "refine"


def _cams_dir(cfg, mode: str) -> Path:
    return _root(cfg) / f"cams_{mode}"


def _load_samples(cfg) -> list[data_mod.Sample]:
    path = _dataset_dir(cfg)
    if not (path / "labels.txt").is_file():
        raise MissingStageError(f"dataset missing at {path} — run gen-data first")
    samples, _ = data_mod.read_dataset(path)
    return samples


def _load_classifier(cfg) -> MiniVgg:
    ckpt = _cls_dir(cfg) / "checkpoint"
    if not (ckpt / "manifest.txt").is_file():
        raise MissingStageError(f"classifier checkpoint missing at {ckpt} — run train-cls first")
    return load_checkpoint(ckpt, cfg.net, seed=cfg.seed)


def _load_refiner(cfg) -> MiniVgg:
    ckpt = _refine_dir(cfg) / "checkpoint"
    if not (ckpt / "manifest.txt").is_file():
        raise MissingStageError(f"refiner checkpoint missing at {ckpt} — run train-refine first")
    return load_checkpoint(ckpt, _refiner_config(cfg), seed=cfg.seed)


def _refiner_config(cfg):
    return replace(cfg.net, drs_flags=(False,) * len(cfg.net.drs_flags))


def _write_loss_log(path, losses, sched) -> None:
    from .engine import decayed_lr
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "loss"])
        for epoch, loss in enumerate(losses):
            writer.writerow([epoch + 1, repr(decayed_lr(sched.lr, sched.decay_epochs,
                                                        sched.decay_factor, epoch)), repr(loss)])


def cmd_gen_data(cfg: ExperimentConfig) -> Path:
    """Generate the toy dataset directory under <out>/dataset."""
    samples = data_mod.gen_toy_dataset(cfg.data_n, cfg.data_classes, cfg.data_side, cfg.data_seed)
    path = data_mod.write_dataset(_dataset_dir(cfg), samples, seed=cfg.data_seed,
                                  classes=cfg.data_classes, side=cfg.data_side)
    print(f"gen-data: wrote {len(samples)} samples to {path}")
    return path


def cmd_train_cls(cfg: ExperimentConfig) -> Path:
    """Train the classifier; writes checkpoint, loss log, and loss curve."""
    samples = _load_samples(cfg)
    train_ids, val_ids = cfg.split(len(samples))
    train = [samples[i] for i in train_ids]
    net = MiniVgg(cfg.net, seed=cfg.seed)
    losses = train_classifier(train, net, cfg.cls, cfg.aug)
    out = _cls_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint", net)
    _write_loss_log(out / "loss_log.csv", losses, cfg.cls)
    save_loss_curve(out / "loss_curve.png", losses, "classifier BCE")
    val = [samples[i] for i in val_ids]
    if val:
        acc = multi_label_accuracy(predict_scores(net, val), np.stack([s.labels for s in val]))
        print(f"train-cls: final loss {losses[-1]:.4f}, held-out accuracy {acc:.4f}")
    else:
        print(f"train-cls: final loss {losses[-1]:.4f}")
    return out


def cmd_train_refine(cfg: ExperimentConfig) -> Path:
    """Train the refiner against the frozen classifier's localization maps."""
    samples = _load_samples(cfg)
    classifier = _load_classifier(cfg)
    train_ids, _ = cfg.split(len(samples))
    train = [samples[i] for i in train_ids]
    refiner = MiniVgg(_refiner_config(cfg), seed=cfg.seed + 1)
    losses = train_refiner(train, classifier, refiner, cfg.refine, cfg.aug)
    out = _refine_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint", refiner)
    _write_loss_log(out / "loss_log.csv", losses, cfg.refine)
    save_loss_curve(out / "loss_curve.png", losses, "refiner MSE")
    print(f"train-refine: first epoch {losses[0]:.6f}, final epoch {losses[-1]:.6f}")
    return out


def _split_indices(cfg, count: int, split: str) -> list[int]:
    train_ids, val_ids = cfg.split(count)
    if split == "train":
        return list(train_ids)
    if split == "val":
        return list(val_ids)
    if split == "all":
        return list(range(count))
    raise UsageError(f"unknown split {split!r}")


def cmd_dump_cams(cfg: ExperimentConfig, mode: str = "drs", split: str = "train") -> Path:
    """Write one map tensor and one heatmap per sample and present class."""
    if mode not in ("raw", "drs", "refined"):
        raise UsageError(f"unknown map mode {mode!r}")
    samples = _load_samples(cfg)
    classifier = _load_classifier(cfg)
    refiner = _load_refiner(cfg) if mode == "refined" else None
    ids = _split_indices(cfg, len(samples), split)
    subset = [samples[i] for i in ids]
    maps = predict_maps(classifier, subset, mode=mode, refiner=refiner)
    out = _cams_dir(cfg, mode)
    out.mkdir(parents=True, exist_ok=True)
    emitted = 0
    for index, sample, stack in zip(ids, subset, maps):
        for c in np.flatnonzero(sample.labels > 0):
            name = f"{index:04d}_c{c}"
            write_tensor(out / f"{name}.drst", stack[c])
            write_heatmap(out / f"{name}.ppm", stack[c], side=sample.gt_mask.shape[0])
            emitted += 1
    print(f"dump-cams: wrote {emitted} {mode} maps to {out}")
    return out


def cmd_gen_labels(cfg: ExperimentConfig, maps_dir: Optional[Path] = None) -> Path:
    """Apply the cue rules to dumped maps; writes <out>/labels_<mode>."""
    maps_dir = Path(maps_dir) if maps_dir is not None else _cams_dir(cfg, "drs")
    tensors = sorted(maps_dir.glob("*_c*.drst")) if maps_dir.is_dir() else []
    if not tensors:
        raise MissingStageError(f"no localization maps at {maps_dir} — run dump-cams first")
    samples = _load_samples(cfg)
    suffix = maps_dir.name.removeprefix("cams_") if maps_dir.name.startswith("cams_") else maps_dir.name
    out = _root(cfg) / f"labels_{suffix}"
    out.mkdir(parents=True, exist_ok=True)

    by_sample: dict[int, dict[int, Path]] = {}
    for path in tensors:
        stem, _, channel = path.stem.partition("_c")
        by_sample.setdefault(int(stem), {})[int(channel)] = path
    side = cfg.data_side
    classes = cfg.data_classes
    for index, channels in sorted(by_sample.items()):
        sample = samples[index]
        first = read_tensor(next(iter(channels.values())))
        stack = np.zeros((classes,) + first.shape, dtype=np.float32)
        for c, path in channels.items():
            stack[c] = read_tensor(path)
        upsampled = upsample_bilinear(stack, side, side)
        label = generate_pseudo_label(upsampled, sample.labels, sample.saliency, cfg.cues)
        write_pgm(out / f"{index:04d}.pgm", label)
    print(f"gen-labels: wrote {len(by_sample)} label maps to {out}")
    return out


def cmd_eval(cfg: ExperimentConfig, labels_dir: Optional[Path] = None) -> tuple[Path, float]:
    """Score pseudo labels against ground-truth masks; writes the metric report."""
    labels_dir = Path(labels_dir) if labels_dir is not None else _root(cfg) / "labels_drs"
    files = sorted(labels_dir.glob("*.pgm")) if labels_dir.is_dir() else []
    if not files:
        raise MissingStageError(f"no pseudo labels at {labels_dir} — run gen-labels first")
    samples = _load_samples(cfg)
    preds, gts = [], []
    for path in files:
        index = int(path.stem)
        preds.append(read_pgm(path))
        gts.append(samples[index].gt_mask)
    per_class, mean = miou(preds, gts, cfg.data_classes + 1)
    names = ["background"] + data_mod.class_names(cfg.data_classes)
    report_dir = _root(cfg) / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{name} {'n/a' if np.isnan(iou) else format(iou, '.6f')}"
             for name, iou in zip(names, per_class)]
    lines.append(f"miou={mean:.6f}")
    text = "\n".join(lines) + "\n"
    report = report_dir / f"{labels_dir.name}.txt"
    report.write_text(text)
    shown = [0.0 if np.isnan(v) else v for v in per_class]
    save_iou_bars(report_dir / f"{labels_dir.name}.png", names, shown, mean)
    print(text, end="")
    return report, mean


def _parse_grid(cfg: ExperimentConfig, spec: str) -> list[tuple[str, ExperimentConfig]]:
    kind, _, rest = spec.partition(":")
    values = [v for v in rest.split(",") if v]
    if not values:
        raise UsageError(f"empty ablation grid {spec!r}")
    settings = []
    all_on = (True,) * len(cfg.net.drs_flags)
    for value in values:
        if kind == "delta":
            try:
                delta = float(value)
            except ValueError:
                raise UsageError(f"bad delta {value!r}") from None
            net = replace(cfg.net, drs_flags=all_on, drs_mode="constant", drs_delta=delta)
            label = f"delta_{value}"
        elif kind == "layers":
            if len(value) != len(cfg.net.drs_flags) or not set(value) <= {"0", "1"}:
                raise UsageError(f"layer grid entry {value!r} must be a {len(cfg.net.drs_flags)}-bit string")
            net = replace(cfg.net, drs_flags=tuple(ch == "1" for ch in value))
            label = f"layers_{value}"
        elif kind == "controller":
            if value not in ("learnable", "constant"):
                raise UsageError(f"controller must be learnable or constant, got {value!r}")
            net = replace(cfg.net, drs_flags=all_on, drs_mode=value)
            label = f"controller_{value}"
        else:
            raise UsageError(f"unknown grid kind {kind!r} (want delta:, layers:, or controller:)")
        sub = replace(cfg, out=str(_root(cfg) / "ablate" / label), net=net)
        settings.append((label, sub))
    return settings


def cmd_ablate(cfg: ExperimentConfig, grid: str) -> Path:
    """Run the full pipeline per grid setting under one shared seed."""
    rows = []
    for label, sub in _parse_grid(cfg, grid):
        print(f"ablate: running {label}")
        cmd_gen_data(sub)
        cmd_train_cls(sub)
        maps_dir = cmd_dump_cams(sub, mode="drs", split="train")
        labels_dir = cmd_gen_labels(sub, maps_dir)
        _, mean = cmd_eval(sub, labels_dir)
        samples = _load_samples(sub)
        _, val_ids = sub.split(len(samples))
        val = [samples[i] for i in val_ids]
        net = _load_classifier(sub)
        acc = multi_label_accuracy(predict_scores(net, val), np.stack([s.labels for s in val]))
        rows.append((label, mean, acc))
    out = _root(cfg) / "ablate"
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "miou", "accuracy"])
        for label, mean, acc in rows:
            writer.writerow([label, f"{mean:.6f}", f"{acc:.6f}"])
    save_ablation_chart(out / "ablation.png", rows)
    for label, mean, acc in rows:
        print(f"ablate: {label} miou={mean:.6f} accuracy={acc:.6f}")
    return csv_path


def cmd_gradcheck(seeds=(0, 1, 2, 3, 4), tolerance: float = 1e-3) -> None:
    """Gradient-check every op and the suppression block; raise on failure."""
    specs = standard_checks() + gradcheck_specs()
    results = run_checks(specs, seeds=seeds)
    worst: dict[str, float] = {}
    for result in results:
        worst[result.name] = max(worst.get(result.name, 0.0), result.max_error)
    failed = []
    for name, err in worst.items():
        status = "PASS" if err < tolerance else "FAIL"
        print(f"gradcheck: {name:<28s} max_rel_err={err:.3e} {status}")
        if err >= tolerance:
            failed.append(name)
    if failed:
        raise NumericalError(f"gradient check failed for: {', '.join(failed)}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="drslite", description="Suppression-based localization pipeline")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment config file (key=value lines)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the toy dataset")
    sub.add_parser("train-cls", parents=[common], help="train the classifier")
    sub.add_parser("train-refine", parents=[common], help="train the refiner")
    dump = sub.add_parser("dump-cams", parents=[common], help="export localization maps")
    dump.add_argument("--mode", choices=("raw", "drs", "refined"), default="drs")
    dump.add_argument("--split", choices=("train", "val", "all"), default="train")
    labels = sub.add_parser("gen-labels", parents=[common], help="generate pseudo labels")
    labels.add_argument("--maps", help="maps directory (default <out>/cams_drs)")
    ev = sub.add_parser("eval", parents=[common], help="score pseudo labels")
    ev.add_argument("--labels", help="labels directory (default <out>/labels_drs)")
    ablate = sub.add_parser("ablate", parents=[common], help="run an ablation grid")
    ablate.add_argument("--grid", required=True,
                        help="delta:v1,v2 | layers:bits1,bits2 | controller:learnable,constant")
    sub.add_parser("gradcheck", parents=[common], help="run the gradient-check suite")
    show = sub.add_parser("show-config", parents=[common], help="print the resolved config")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gradcheck":
            cmd_gradcheck()
            return 0
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "train-cls":
            cmd_train_cls(cfg)
        elif args.command == "train-refine":
            cmd_train_refine(cfg)
        elif args.command == "dump-cams":
            cmd_dump_cams(cfg, mode=args.mode, split=args.split)
        elif args.command == "gen-labels":
            cmd_gen_labels(cfg, maps_dir=args.maps)
        elif args.command == "eval":
            cmd_eval(cfg, labels_dir=args.labels)
        elif args.command == "ablate":
            cmd_ablate(cfg, args.grid)
        elif args.command == "show-config":
            print(dumps_config(cfg), end="")
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MissingStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, EngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
