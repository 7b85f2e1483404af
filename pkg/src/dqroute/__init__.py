"""Difficulty-weighted training of a three-expert mixture with confidence routing."""

from .config import RunConfig, load_config
from .datagen import ConfigError, Dataset, LongTailSpec, ShotSplit, generate, load_csv, make_spec, write_csv
from .trainer import EpochReport, TrainResult, evaluate, train

__all__ = [
    "ConfigError", "Dataset", "EpochReport", "LongTailSpec", "RunConfig", "ShotSplit", "TrainResult",
    "evaluate", "generate", "load_config", "load_csv", "make_spec", "train", "write_csv",
]
