"""Synthetic multi-sequence scenes: ray-cast rendering and sparsification.

Scenes are built from planes and spheres only, so every ray intersection has
a closed form and rendered depth can be verified analytically. Cameras follow
per-sequence screw trajectories (a constant camera-frame step pose applied
frame to frame). Besides the training frames at integer steps, frames at
half steps are rendered as a held-out split with full ground truth.

Everything is deterministic: rendering has no randomness, and sparsification
draws from a per-frame generator spawned off the dataset seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    Intrinsics,
    PixelGrid,
    Pose,
    _rotation_from_axis_angle,
    pixel_rays,
    rot_y,
)
from .losses import FrameTarget

__all__ = [
    "Plane",
    "Sphere",
    "Trajectory",
    "SceneConfig",
    "RenderedFrame",
    "Dataset",
    "look_at",
    "default_config",
    "render_frame",
    "generate_scene",
    "sparsify",
]

logger = logging.getLogger(__name__)

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``point`` with unit-ish ``normal``."""

    point: tuple[float, float, float]
    normal: tuple[float, float, float]

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        p = np.asarray(self.point, dtype=np.float64)
        denom = dirs @ n
        offset = (p - origin) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = offset / denom
        t = np.where((np.abs(denom) > _RAY_EPS) & (t > _RAY_EPS), t, np.inf)
        return t


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        oc = origin - c
        a = (dirs * dirs).sum(axis=1)
        b = 2.0 * dirs @ oc
        cc = oc @ oc - self.radius**2
        disc = b * b - 4.0 * a * cc
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_near = (-b - sq) / (2.0 * a)
        t_far = (-b + sq) / (2.0 * a)
        t = np.where(t_near > _RAY_EPS, t_near, t_far)
        return np.where(hit & (t > _RAY_EPS), t, np.inf)


@dataclass(frozen=True)
class Trajectory:
    """Per-sequence camera path: a start pose and a constant camera-frame step."""

    start: Pose
    step: Pose


@dataclass(frozen=True)
class SceneConfig:
    seed: int
    primitives: tuple
    num_sequences: int
    frames_per_sequence: int
    resolution: tuple[int, int]  # (width, height)
    intrinsics: Intrinsics
    trajectories: tuple[Trajectory, ...]
    name: str = "synthetic"


@dataclass(frozen=True)
class RenderedFrame:
    """One rendered view: ground truth plus its (sequence, time) id."""

    sequence: int
    time: float
    target: FrameTarget


@dataclass(frozen=True)
class Dataset:
    """Rendered scene: train sequences, held-out half-step frames, metadata."""

    name: str
    intrinsics: Intrinsics
    grid: PixelGrid
    sequences: tuple[tuple[RenderedFrame, ...], ...]
    heldout: tuple[RenderedFrame, ...]
    diameter: float
    seed: int
    config: SceneConfig | None = field(default=None, compare=False)

    @property
    def num_sequences(self) -> int:
        return len(self.sequences)

    def all_train_frames(self) -> list[RenderedFrame]:
        return [f for seq in self.sequences for f in seq]


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose at ``eye`` with the optical axis toward ``target``.

    Camera axes: x right, y down, z forward (z is the viewing direction).
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("look_at target coincides with eye")
    forward /= norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= rn
    down = np.cross(forward, right)
    return Pose(np.stack([right, down, forward], axis=1), eye)


def _half_step(step: Pose) -> Pose:
    """Screw-motion square root: half of a small camera-frame step pose."""
    r = step.rotation
    angle = math.acos(min(1.0, max(-1.0, (np.trace(r) - 1.0) / 2.0)))
    if angle < 1e-12:
        r_half = np.eye(3)
    else:
        axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / (
            2.0 * math.sin(angle)
        )
        r_half = _rotation_from_axis_angle(axis, angle / 2.0)
    # (R_h, t_h)^2 = (R_h^2, (R_h + I) t_h), so t_h solves (R_h + I) t_h = t
    t_half = np.linalg.solve(r_half + np.eye(3), step.translation)
    return Pose(r_half, t_half)


def render_frame(
    primitives,
    pose: Pose,
    intrinsics: Intrinsics,
    grid: PixelGrid,
    sequence: int = 0,
    time: float = 0.0,
) -> RenderedFrame:
    """Ray-cast one view; nearest primitive hit per pixel gives the depth.

    Ray directions keep camera-frame z = 1, so the ray parameter at the hit
    is directly the pinhole depth. Misses are marked invalid and their depth
    and point-map entries zeroed.
    """
    rays_cam = pixel_rays(intrinsics, grid.centers)
    dirs = rays_cam @ pose.rotation.T
    origin = pose.translation
    depth = np.full(grid.n_pixels, np.inf)
    for prim in primitives:
        depth = np.minimum(depth, prim.intersect(origin, dirs))
    valid = np.isfinite(depth)
    depth = np.where(valid, depth, 0.0)
    points = pose.apply(depth[:, None] * rays_cam)
    points[~valid] = 0.0
    return RenderedFrame(
        sequence=sequence,
        time=time,
        target=FrameTarget(point_map=points, depth=depth, valid_mask=valid, pose=pose),
    )


def generate_scene(cfg: SceneConfig) -> Dataset:
    """Render all sequences of a scene, plus half-step held-out frames.

    Deterministic for a given config. Raises when the config invariants are
    violated: no primitives, too few frames, or a frame seeing less than half
    the scene.
    """
    if not cfg.primitives:
        raise ValueError("cameras face no geometry: scene has no primitives")
    if cfg.num_sequences < 1 or cfg.frames_per_sequence < 1:
        raise ValueError("need at least one sequence and one frame per sequence")
    if cfg.num_sequences < 2:
        logger.warning(
            "scene has a single sequence; across-sequence constraints will be empty"
        )
    if cfg.frames_per_sequence < 2:
        logger.warning("sequences of one frame; along-sequence constraints will be empty")
    if len(cfg.trajectories) != cfg.num_sequences:
        raise ValueError(
            f"config declares {cfg.num_sequences} sequences but {len(cfg.trajectories)} trajectories"
        )
    width, height = cfg.resolution
    grid = PixelGrid(width, height)
    sequences = []
    heldout = []
    for k, traj in enumerate(cfg.trajectories):
        half = _half_step(traj.step)
        pose = traj.start
        frames = []
        for i in range(cfg.frames_per_sequence):
            frame = render_frame(cfg.primitives, pose, cfg.intrinsics, grid, k, float(i))
            hit_fraction = frame.target.valid_mask.mean()
            if hit_fraction < 0.5:
                raise ValueError(
                    f"camera {k}/{i} sees too little geometry "
                    f"({hit_fraction:.0%} hit pixels, need >= 50%)"
                )
            frames.append(frame)
            if i < cfg.frames_per_sequence - 1:
                mid_pose = pose.compose(half)
                heldout.append(
                    render_frame(cfg.primitives, mid_pose, cfg.intrinsics, grid, k, i + 0.5)
                )
            pose = pose.compose(traj.step)
        sequences.append(tuple(frames))

    pts = np.concatenate(
        [f.target.point_map[f.target.valid_mask] for seq in sequences for f in seq]
    )
    diameter = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return Dataset(
        name=cfg.name,
        intrinsics=cfg.intrinsics,
        grid=grid,
        sequences=tuple(sequences),
        heldout=tuple(heldout),
        diameter=diameter,
        seed=cfg.seed,
        config=cfg,
    )


def sparsify(target: FrameTarget, fraction: float, seed) -> FrameTarget:
    """Keep a seeded uniform subset of valid pixels, round(fraction * count).

    Depth and point map share the surviving mask. A surviving count of zero
    is allowed (the frame then contributes nothing to the direct losses).
    ``seed`` is anything ``numpy.random.default_rng`` accepts.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return target
    valid_idx = np.flatnonzero(target.valid_mask)
    keep = int(np.rint(fraction * valid_idx.size))
    if keep == 0:
        logger.warning("sparsify: no surviving ground-truth points in frame")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(valid_idx, size=keep, replace=False)
    mask = np.zeros_like(target.valid_mask)
    mask[chosen] = True
    return replace(target, valid_mask=mask)


def default_config(
    seed: int = 0,
    num_sequences: int = 2,
    frames_per_sequence: int = 8,
    resolution: tuple[int, int] = (32, 32),
    overlap: float = 0.7,
    name: str = "desk",
) -> SceneConfig:
    """Desk-scale scene: ground, back wall, three spheres, two camera arcs.

    ``overlap`` in [0, 1] pulls the later sequences' aim point toward the
    first sequence's, controlling how much scene the sequences share.
    """
    if not (0.0 <= overlap <= 1.0):
        raise ValueError(f"overlap must be in [0, 1], got {overlap}")
    width, height = resolution
    focal = 0.875 * width  # about 60 degrees horizontal field of view
    intrinsics = Intrinsics(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0)
    primitives = (
        Plane(point=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0)),   # ground
        Plane(point=(0.0, 6.0, 0.0), normal=(0.0, -1.0, 0.0)),  # back wall
        Plane(point=(-5.0, 0.0, 0.0), normal=(1.0, 0.0, 0.0)),  # left wall
        Plane(point=(5.0, 0.0, 0.0), normal=(-1.0, 0.0, 0.0)),  # right wall
        Plane(point=(0.0, 0.0, 4.5), normal=(0.0, 0.0, -1.0)),  # ceiling
        Sphere(center=(-1.2, 3.8, 1.1), radius=1.1),
        Sphere(center=(1.6, 4.2, 0.7), radius=0.7),
        Sphere(center=(0.3, 2.6, 0.45), radius=0.45),
    )
    shared_target = np.array([0.0, 4.0, 1.0])
    own_targets = [np.array([-1.0, 4.0, 1.0]), np.array([1.5, 4.2, 0.8])]
    eyes = [np.array([-2.1, -3.4, 1.5]), np.array([2.3, -2.8, 2.1])]
    # camera-frame steps: strafe plus a slight pan back toward the scene
    steps = [
        Pose(rot_y(math.radians(2.0)), (0.22, 0.0, 0.05)),
        Pose(rot_y(math.radians(-1.8)), (-0.20, 0.02, 0.04)),
    ]
    trajectories = []
    for k in range(num_sequences):
        eye = eyes[k % 2] + np.array([0.0, 0.0, 0.3]) * (k // 2)
        own = own_targets[k % 2]
        target = overlap * shared_target + (1.0 - overlap) * own
        trajectories.append(Trajectory(start=look_at(eye, target), step=steps[k % 2]))
    return SceneConfig(
        seed=seed,
        primitives=primitives,
        num_sequences=num_sequences,
        frames_per_sequence=frames_per_sequence,
        resolution=resolution,
        intrinsics=intrinsics,
        trajectories=tuple(trajectories),
        name=name,
    )
