"""Graph-attention reconstruction of dropped LiDAR beams."""

from .autodiff import Tape, Tensor
from .beams import (
    DESK_SENSOR,
    HDL64E,
    DropoutPattern,
    MaskedFrame,
    SensorSpec,
    apply_channel_dropout,
    cartesian_from_spherical,
    estimate_beam_index,
    spherical_from_cartesian,
    unmask,
)
from .gat import GatModel, ModelConfig, init_params, load_model, model_forward, save_model
from .graph import KnnGraph, brute_force_knn, build_knn
from .metrics import MetricsReport, accuracy_at, chamfer, error_cdf, mae_z, rmse_xyz, rmse_z
from .pointcloud import PointCloud, range_filter, read_csv, read_kitti_bin, subsample_uniform, write_csv, write_ply
from .synth import Box, Scene, make_benchmark_set, raycast_scan
from .trainer import GraphConfig, TrainConfig, normalize_frame, train

__version__ = "0.1.0"

__all__ = [
    "accuracy_at",
    "apply_channel_dropout",
    "Box",
    "brute_force_knn",
    "build_knn",
    "cartesian_from_spherical",
    "chamfer",
    "DESK_SENSOR",
    "DropoutPattern",
    "error_cdf",
    "estimate_beam_index",
    "GatModel",
    "GraphConfig",
    "HDL64E",
    "init_params",
    "KnnGraph",
    "load_model",
    "mae_z",
    "make_benchmark_set",
    "MaskedFrame",
    "MetricsReport",
    "model_forward",
    "ModelConfig",
    "normalize_frame",
    "PointCloud",
    "range_filter",
    "raycast_scan",
    "read_csv",
    "read_kitti_bin",
    "rmse_xyz",
    "rmse_z",
    "save_model",
    "Scene",
    "SensorSpec",
    "spherical_from_cartesian",
    "subsample_uniform",
    "Tape",
    "Tensor",
    "train",
    "TrainConfig",
    "unmask",
    "write_csv",
    "write_ply",
]
