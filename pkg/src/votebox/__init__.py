"""Desk-scale 3D object proposals from lidar, with verifiable evaluation.

Pipeline: front-view XYZ-map projection, anchor-grid voting proposals, a
gradient-checked micro fusion network with teacher-gated distillation,
rotated-box geometry, and KITTI-style average-precision evaluation, all
driven by a deterministic batch CLI.
"""

from .cloudio import (
    LabeledBox,
    MalformedFileError,
    PointCloud,
    SceneSpec,
    SyntheticScene,
    generate_scene,
    read_detections,
    read_velodyne_bin,
    write_detections,
    write_velodyne_bin,
)
from .config import ConfigError, RunConfig
from .estimators import FrontViewProjector, StudentDistiller, VotingProposer
from .evaluation import (
    EvalConfig,
    MatchResult,
    PUBLISHED_REFERENCE,
    ReportTable,
    UndefinedAPError,
    average_precision,
    default_eval_grid,
    difficulty_bin,
    match,
    report,
)
from .frontview import (
    FrontViewMap,
    ProjectionConfig,
    box_to_map_rect,
    build_map,
    crop_patch,
    project_point,
    project_points,
    render_channel_pgm,
)
from .geometry import (
    Box3D,
    Proposal,
    Rect2D,
    iou_3d,
    iou_bev,
    iou_rect,
    nms,
)
from .render import bev_svg
from .uvpm import (
    AnchorGrid,
    GeometricSeedBackbone,
    LearnedSeedBackbone,
    UvpmConfig,
    build_anchor_grid,
    cluster_votes,
    density,
    expansion_check,
    filter_anchors,
    generate_seeds,
    make_pseudo_cloud,
    propose,
    refine,
    vote,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "PointCloud",
    "LabeledBox",
    "SceneSpec",
    "SyntheticScene",
    "MalformedFileError",
    "read_velodyne_bin",
    "write_velodyne_bin",
    "read_detections",
    "write_detections",
    "generate_scene",
    "ConfigError",
    "RunConfig",
    "FrontViewProjector",
    "VotingProposer",
    "StudentDistiller",
    "EvalConfig",
    "MatchResult",
    "UndefinedAPError",
    "PUBLISHED_REFERENCE",
    "ReportTable",
    "average_precision",
    "default_eval_grid",
    "difficulty_bin",
    "match",
    "report",
    "FrontViewMap",
    "ProjectionConfig",
    "build_map",
    "project_point",
    "project_points",
    "crop_patch",
    "box_to_map_rect",
    "render_channel_pgm",
    "Box3D",
    "Rect2D",
    "Proposal",
    "iou_rect",
    "iou_bev",
    "iou_3d",
    "nms",
    "bev_svg",
    "UvpmConfig",
    "AnchorGrid",
    "GeometricSeedBackbone",
    "LearnedSeedBackbone",
    "build_anchor_grid",
    "density",
    "filter_anchors",
    "expansion_check",
    "make_pseudo_cloud",
    "generate_seeds",
    "vote",
    "cluster_votes",
    "refine",
    "propose",
]
