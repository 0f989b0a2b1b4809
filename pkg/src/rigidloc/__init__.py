"""rigidloc: camera relocalization from two learned map representations.

A camera frame is localized by one weighted closed-form rigid alignment of
per-pixel global scene coordinates against back-projected depth. Training
flows gradients through the alignment's SVD and constrains poses with a
network of relative-pose terms along and across capture sequences, which
keeps learning viable when only a sparse fraction of 3D ground truth exists.
"""

from .alignment import (
    AlignmentError,
    AlignmentInternals,
    DegenerateAlignment,
    IllConditionedGradient,
    alignment_cost,
    alignment_cost_sq,
    finite_difference_gradient,
    kabsch,
    kabsch_gradient,
    svd3,
    weighted_kabsch,
)
from .estimators import RigidAlignment, SceneCoordinateLocalizer
from .geometry import (
    Intrinsics,
    PixelGrid,
    Pose,
    backproject,
    compose,
    inverse,
    pixel_rays,
    project_to_depth,
    relative_pose,
    rot_x,
    rot_y,
    rot_z,
    rotation_angle_error,
    translation_error,
)
from .losses import (
    FramePrediction,
    FrameTarget,
    LossReport,
    SequenceBatch,
    across_loss,
    along_loss,
    l3d,
    l_depth,
    pose_loss,
    relpose_loss,
    total_loss,
)
from .optim import AdamState, adam_step
from .scene import (
    Dataset,
    Plane,
    RenderedFrame,
    SceneConfig,
    Sphere,
    default_config,
    generate_scene,
    render_frame,
    sparsify,
)
from .trainer import (
    DivergenceError,
    ScenePredictor,
    TrainConfig,
    TrainResult,
    localize,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "AlignmentInternals",
    "DegenerateAlignment",
    "IllConditionedGradient",
    "alignment_cost",
    "alignment_cost_sq",
    "finite_difference_gradient",
    "kabsch",
    "kabsch_gradient",
    "svd3",
    "weighted_kabsch",
    "RigidAlignment",
    "SceneCoordinateLocalizer",
    "Intrinsics",
    "PixelGrid",
    "Pose",
    "backproject",
    "compose",
    "inverse",
    "pixel_rays",
    "project_to_depth",
    "relative_pose",
    "rot_x",
    "rot_y",
    "rot_z",
    "rotation_angle_error",
    "translation_error",
    "FramePrediction",
    "FrameTarget",
    "LossReport",
    "SequenceBatch",
    "across_loss",
    "along_loss",
    "l3d",
    "l_depth",
    "pose_loss",
    "relpose_loss",
    "total_loss",
    "AdamState",
    "adam_step",
    "Dataset",
    "Plane",
    "RenderedFrame",
    "SceneConfig",
    "Sphere",
    "default_config",
    "generate_scene",
    "render_frame",
    "sparsify",
    "DivergenceError",
    "ScenePredictor",
    "TrainConfig",
    "TrainResult",
    "localize",
    "train",
]
