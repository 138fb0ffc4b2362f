"""Temporal-spatial graph attention pipeline for EEG-style emotion
recognition, with a from-scratch reverse-mode differentiation engine and
adversarial domain adaptation."""

__version__ = "0.1.0"

from .config import TrainConfig, load_config, preset_config
from .features import (BandSpec, FeatureSample, RawTrial, extract_features,
                       gen_synthetic, standardize)
from .model import Model
from .training import train

__all__ = [
    "BandSpec", "FeatureSample", "Model", "RawTrial", "TrainConfig",
    "extract_features", "gen_synthetic", "load_config", "preset_config",
    "standardize", "train",
]
