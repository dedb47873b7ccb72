"""Weakly supervised video object segmentation with a frame-wise teacher and a temporal student."""

from .config import ConfigError, RunConfig, config_from_dict, load_config
from .dataio import ClipDataset, SyntheticConfig, generate_synthetic, load_dataset, save_dataset, split_clips
from .encoder import VideoClip, encode, make_toy_backbone
from .estimator import WeakVideoSegmenter
from .metrics import MetricsReport
from .pooling import PoolingConfig, pool
from .trainer import Checkpoint, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ClipDataset", "ConfigError", "MetricsReport", "PoolingConfig", "RunConfig",
    "SyntheticConfig", "VideoClip", "WeakVideoSegmenter", "config_from_dict", "encode", "evaluate",
    "generate_synthetic", "load_checkpoint", "load_config", "load_dataset", "make_toy_backbone", "pool",
    "save_checkpoint", "save_dataset", "split_clips", "train",
]
