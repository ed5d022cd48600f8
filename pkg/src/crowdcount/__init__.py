"""Crowd density estimation end to end: synthetic scenes, adaptive-kernel
ground truth, a pyramid-attention network with routed dual decoders, training
with gradient verification, and MAE/MSE evaluation."""

from .augmentation import aspect_resize, five_crops, legalize, resize_scene
from .attention import ChannelGate, ChannelSpatialAttention, SpatialGate
from .config import ModelConfig, load_config
from .data_io import (
    AnnotatedScene,
    DensityMap,
    FormatError,
    load_annotations,
    load_density_map,
    load_manifest,
    save_density_map,
    save_scene,
)
from .density import (
    class_label,
    downsample_preserving_count,
    fixed_sigma_density,
    knn_sigma,
    render_density,
    split_sparse_dense,
)
from .evaluation import EvalResult, count_from_density, evaluate, mae, mse, render_report
from .losses import classification_loss, density_loss, total_loss
from .model import CrowdDensityNet, ModelOutput, NetOutput
from .synthetic import SynthSpec, generate_dataset, generate_scene
from .training import (
    CheckpointError,
    TrainingDiverged,
    grad_check,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedScene",
    "ChannelGate",
    "ChannelSpatialAttention",
    "CheckpointError",
    "CrowdDensityNet",
    "DensityMap",
    "EvalResult",
    "FormatError",
    "ModelConfig",
    "ModelOutput",
    "NetOutput",
    "SpatialGate",
    "SynthSpec",
    "TrainingDiverged",
    "aspect_resize",
    "class_label",
    "classification_loss",
    "count_from_density",
    "density_loss",
    "downsample_preserving_count",
    "evaluate",
    "fixed_sigma_density",
    "five_crops",
    "generate_dataset",
    "generate_scene",
    "grad_check",
    "knn_sigma",
    "legalize",
    "load_annotations",
    "load_checkpoint",
    "load_config",
    "load_density_map",
    "load_manifest",
    "mae",
    "mse",
    "render_density",
    "render_report",
    "resize_scene",
    "save_checkpoint",
    "save_density_map",
    "save_scene",
    "split_sparse_dense",
    "total_loss",
    "train",
]
