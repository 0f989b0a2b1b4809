"""Training losses and the along/across relative-pose constraint network.

Per frame, predictions carry a global point map, a depth map, per-pixel
alignment weights, and the pose recovered by weighted rigid alignment of the
two maps. Targets carry ground truth plus a validity mask; masked-out entries
are never read.

Five loss terms combine with unit weights:

* ``l3d``      mean Euclidean error of the global point map on valid pixels
* ``l_depth``  mean absolute depth error on valid pixels
* ``l_pose``   translation distance plus geodesic rotation angle per frame
* ``along_loss``   relative-pose errors between consecutive frames of each
  sequence, summed: K * (N - 1) terms
* ``across_loss``  relative-pose errors between same-index frames of
  neighboring sequences, summed: N * (K - 1) terms

Relative terms compare predicted against ground-truth relative poses, so they
are invariant to one rigid transform applied globally to every pose.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, relative_pose, rotation_angle_error, translation_error

__all__ = [
    "FramePrediction",
    "FrameTarget",
    "SequenceBatch",
    "LossReport",
    "LOSS_TERMS",
    "l3d",
    "l_depth",
    "pose_loss",
    "relpose_loss",
    "along_pairs",
    "across_pairs",
    "along_loss",
    "across_loss",
    "total_loss",
]

logger = logging.getLogger(__name__)

LOSS_TERMS = ("l3d", "l_depth", "l_pose", "l_along", "l_across")


@dataclass(frozen=True)
class FrameTarget:
    """Ground truth for one frame: global points, depth, validity mask, pose."""

    point_map: np.ndarray   # (N, 3)
    depth: np.ndarray       # (N,)
    valid_mask: np.ndarray  # (N,) bool
    pose: Pose


@dataclass(frozen=True)
class FramePrediction:
    """Model output for one frame.

    ``pose_hat`` is None when the alignment of the two predicted maps was
    degenerate; such frames contribute no pose-dependent loss terms.
    """

    point_map: np.ndarray   # (N, 3)
    depth: np.ndarray       # (N,)
    weights: np.ndarray     # (N,) in (0, 1)
    pose_hat: Pose | None

    @property
    def has_pose(self) -> bool:
        return self.pose_hat is not None


@dataclass(frozen=True)
class SequenceBatch:
    """K sequences by N frames of targets; all sequences the same length."""

    sequences: tuple[tuple[FrameTarget, ...], ...]

    def __post_init__(self):
        lengths = {len(s) for s in self.sequences}
        if len(lengths) > 1:
            raise ValueError(f"all sequences in a batch must have equal length, got {sorted(lengths)}")

    @property
    def num_sequences(self) -> int:
        return len(self.sequences)

    @property
    def frames_per_sequence(self) -> int:
        return len(self.sequences[0]) if self.sequences else 0


@dataclass(frozen=True)
class LossReport:
    """Per-step loss components; total is their unit-weighted sum."""

    l3d: float
    l_depth: float
    l_pose: float
    l_along: float
    l_across: float
    skipped_frames: int = 0
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "total", self.l3d + self.l_depth + self.l_pose + self.l_along + self.l_across
        )

    def to_record(self, step: int) -> dict:
        """One metrics-log JSON object."""
        return {
            "step": step,
            "l3d": self.l3d,
            "l_depth": self.l_depth,
            "l_pose": self.l_pose,
            "l_along": self.l_along,
            "l_across": self.l_across,
            "total": self.total,
            "skipped_frames": self.skipped_frames,
        }


def l3d(pred: FramePrediction, tgt: FrameTarget) -> float:
    """Mean Euclidean error of the global point map over valid pixels."""
    mask = tgt.valid_mask
    if not mask.any():
        logger.debug("l3d: no valid points in frame, contributing 0")
        return 0.0
    residual = pred.point_map[mask] - tgt.point_map[mask]
    return float(np.linalg.norm(residual, axis=1).mean())


def l_depth(pred: FramePrediction, tgt: FrameTarget) -> float:
    """Mean absolute depth error over valid pixels."""
    mask = tgt.valid_mask
    if not mask.any():
        logger.debug("l_depth: no valid points in frame, contributing 0")
        return 0.0
    return float(np.abs(pred.depth[mask] - tgt.depth[mask]).mean())


def pose_loss(pose: Pose, pose_hat: Pose) -> float:
    """Translation distance plus geodesic rotation angle (radians)."""
    return translation_error(pose.translation, pose_hat.translation) + rotation_angle_error(
        pose.rotation, pose_hat.rotation
    )


def relpose_loss(pose_i: Pose, pose_j: Pose, pose_i_hat: Pose, pose_j_hat: Pose) -> float:
    """Pose loss between ground-truth and predicted relative poses i -> j."""
    return pose_loss(relative_pose(pose_i, pose_j), relative_pose(pose_i_hat, pose_j_hat))


def along_pairs(num_sequences: int, frames_per_sequence: int):
    """Index pairs ((k, i), (k, i+1)) of consecutive frames within sequences."""
    for k in range(num_sequences):
        for i in range(frames_per_sequence - 1):
            yield (k, i), (k, i + 1)


def across_pairs(num_sequences: int, frames_per_sequence: int):
    """Index pairs ((k, i), (k+1, i)) of same-index frames in adjacent sequences."""
    for i in range(frames_per_sequence):
        for k in range(num_sequences - 1):
            yield (k, i), (k + 1, i)


def _relpose_sum(batch: SequenceBatch, preds, pairs) -> float:
    total = 0.0
    for (ka, ia), (kb, ib) in pairs:
        pa, pb = preds[ka][ia], preds[kb][ib]
        if not (pa.has_pose and pb.has_pose):
            continue
        total += relpose_loss(
            batch.sequences[ka][ia].pose,
            batch.sequences[kb][ib].pose,
            pa.pose_hat,
            pb.pose_hat,
        )
    return total


def along_loss(batch: SequenceBatch, preds) -> float:
    """Sum of relative-pose errors along sequences; K * (N - 1) terms."""
    return _relpose_sum(
        batch, preds, along_pairs(batch.num_sequences, batch.frames_per_sequence)
    )


def across_loss(batch: SequenceBatch, preds) -> float:
    """Sum of relative-pose errors across sequences; N * (K - 1) terms."""
    return _relpose_sum(
        batch, preds, across_pairs(batch.num_sequences, batch.frames_per_sequence)
    )


def total_loss(batch: SequenceBatch, preds, enabled=None) -> LossReport:
    """Evaluate the full loss network over a batch.

    ``preds`` is a nested K x N structure of FramePrediction matching the
    batch. ``enabled`` restricts which terms are computed; disabled terms are
    reported as exactly 0. l3d and l_depth are averaged per frame and then
    across frames; l_pose is averaged over frames with a recovered pose;
    along/across are the plain sums defined above. Frames whose alignment
    failed contribute no pose-dependent terms and are counted.
    """
    if enabled is None:
        enabled = LOSS_TERMS
    unknown = set(enabled) - set(LOSS_TERMS)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")

    flat = [
        (tgt, pred)
        for seq_t, seq_p in zip(batch.sequences, preds)
        for tgt, pred in zip(seq_t, seq_p)
    ]
    n_frames = len(flat)
    skipped = sum(1 for _, pred in flat if not pred.has_pose)

    v_3d = v_depth = v_pose = v_along = v_across = 0.0
    if "l3d" in enabled and n_frames:
        v_3d = sum(l3d(pred, tgt) for tgt, pred in flat) / n_frames
    if "l_depth" in enabled and n_frames:
        v_depth = sum(l_depth(pred, tgt) for tgt, pred in flat) / n_frames
    if "l_pose" in enabled:
        with_pose = [(tgt, pred) for tgt, pred in flat if pred.has_pose]
        if with_pose:
            v_pose = sum(pose_loss(tgt.pose, pred.pose_hat) for tgt, pred in with_pose) / len(
                with_pose
            )
    if "l_along" in enabled:
        v_along = along_loss(batch, preds)
    if "l_across" in enabled:
        v_across = across_loss(batch, preds)

    return LossReport(
        l3d=v_3d,
        l_depth=v_depth,
        l_pose=v_pose,
        l_along=v_along,
        l_across=v_across,
        skipped_frames=skipped,
    )
