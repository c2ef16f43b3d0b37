"""Drivable-area segmentation toolkit."""

from .core import (ConfigError, DataError, DecodeError, DrivesegError,
                   FeaturePyramid, FormatError, LayoutError, ModelConfig,
                   NumericsError, SegmentationOutput, ShapeError,
                   validate_config)
from .data import DataConfig, DatasetBundle, build_dataset, make_toy_dataset
from .losses import LossParams, dice_loss, focal_loss, total_loss
from .metrics import (ConfusionCounts, MetricsReport, build_report,
                      compute_metrics, confusion, max_f_score)
from .model import Segmenter, build_model
from .profiler import ablation_table, count_flops, count_parameters, measure_fps
from .refine import boundary_error_map
from .trainer import TrainConfig, TrainState, evaluate, train

__all__ = [
    "ConfigError", "DataError", "DecodeError", "DrivesegError",
    "FeaturePyramid", "FormatError", "LayoutError", "ModelConfig",
    "NumericsError", "SegmentationOutput", "ShapeError", "validate_config",
    "DataConfig", "DatasetBundle", "build_dataset", "make_toy_dataset",
    "LossParams", "dice_loss", "focal_loss", "total_loss",
    "ConfusionCounts", "MetricsReport", "build_report", "compute_metrics",
    "confusion", "max_f_score",
    "Segmenter", "build_model",
    "ablation_table", "count_flops", "count_parameters", "measure_fps",
    "boundary_error_map",
    "TrainConfig", "TrainState", "evaluate", "train",
]
