"""Gradient-checked micro network: tensors, attention, layers, distillation."""

from .attention import AttentionParams, attention, multi_head
from .checkpoint import load_weights, save_weights
from .distill import (
    DEFAULT_BAND,
    ScriptedTeacher,
    distill_batch_loss,
    distill_loss,
)
from .fusion import FusionConfig, StudentFusionNet, student_fusion_forward
from .layers import MLP, Conv1D, Conv2D, Dense, avg_pool2d, roi_align
from .pointnet import (
    FeaturePropagation,
    SetAbstraction,
    VoteBackbone,
    farthest_point_sample,
    interpolate_features,
)
from .tensor import Tensor, concat, gradient_check
from .viewpoint import BIN_WIDTH, N_BINS, viewpoint_decode, viewpoint_encode

__all__ = [
    "AttentionParams",
    "attention",
    "multi_head",
    "load_weights",
    "save_weights",
    "DEFAULT_BAND",
    "ScriptedTeacher",
    "distill_batch_loss",
    "distill_loss",
    "FusionConfig",
    "StudentFusionNet",
    "student_fusion_forward",
    "MLP",
    "Conv1D",
    "Conv2D",
    "Dense",
    "avg_pool2d",
    "roi_align",
    "FeaturePropagation",
    "SetAbstraction",
    "VoteBackbone",
    "farthest_point_sample",
    "interpolate_features",
    "Tensor",
    "concat",
    "gradient_check",
    "viewpoint_decode",
    "viewpoint_encode",
    "N_BINS",
    "BIN_WIDTH",
]
