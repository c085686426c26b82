"""Desk-scale discriminative region suppression for weakly-supervised localization."""

from .engine import Tensor, Tape, backward
from .suppression import DrsConfig, drs_forward, suppress
from .networks import MiniVgg, NetworkConfig, TrainSchedule, localization_maps
from .dataset import Sample, AugmentConfig, gen_toy_dataset, augment
from .labeling import CueConfig, generate_pseudo_label, miou, upsample_bilinear
from .config import ExperimentConfig, default_config, load_config

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Tape", "backward",
    "DrsConfig", "drs_forward", "suppress",
    "MiniVgg", "NetworkConfig", "TrainSchedule", "localization_maps",
    "Sample", "AugmentConfig", "gen_toy_dataset", "augment",
    "CueConfig", "generate_pseudo_label", "miou", "upsample_bilinear",
    "ExperimentConfig", "default_config", "load_config",
    "__version__",
]
