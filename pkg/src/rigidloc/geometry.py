"""SE(3) pose algebra, rotation metrics, and pinhole projection.

Conventions, fixed once and used everywhere:

* A ``Pose`` maps camera-frame points to the global frame: ``x = R y + t``.
* Pixel centers sit at ``(col + 0.5, row + 0.5)``; pixels enumerate row-major.
* Angles are radians internally; degrees appear only at reporting boundaries.
* All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import as_float_array

__all__ = [
    "Pose",
    "Intrinsics",
    "PixelGrid",
    "rot_x",
    "rot_y",
    "rot_z",
    "compose",
    "inverse",
    "relative_pose",
    "rotation_angle_error",
    "translation_error",
    "pixel_rays",
    "backproject",
    "project_to_depth",
]


def rot_x(angle: float) -> np.ndarray:
    """Rotation matrix about the x axis (radians)."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    """Rotation matrix about the y axis (radians)."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    """Rotation matrix about the z axis (radians)."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotation_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula. Internal: axis-angle is not part of the public API."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-15:
        return np.eye(3)
    k = axis / n
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


@dataclass(frozen=True)
class Pose:
    """Rigid transform from camera frame to global frame: ``x = R y + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: result maps p to self(other(p))."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform (..., 3) points from camera frame to global frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def matrix44(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b then a."""
    return a.compose(b)


def inverse(pose: Pose) -> Pose:
    return pose.inverse()


def relative_pose(pose_i: Pose, pose_j: Pose) -> Pose:
    """Pose of camera j expressed in camera i's frame: inverse(Ti) . Tj."""
    return pose_i.inverse().compose(pose_j)


def rotation_angle_error(rotation: np.ndarray, rotation_hat: np.ndarray) -> float:
    """Geodesic angle between two rotations, in [0, pi] radians.

    Mathematically acos((trace(Rhat R^T) - 1) / 2) with the argument clamped
    to [-1, 1]; evaluated as atan2(sin, cos) of the relative rotation, which
    computes the same angle without acos's precision loss near 0 and pi and
    never produces NaN. The transpose realizes the inverse; for valid
    rotations they coincide.
    """
    r = as_float_array(rotation, "rotation", (3, 3))
    r_hat = as_float_array(rotation_hat, "rotation_hat", (3, 3))
    q = r_hat @ r.T
    # q is a rotation by angle a: (q - q^T)/2 has Frobenius norm sqrt(2)|sin a|
    skew = (q - q.T) / 2.0
    sin_a = min(1.0, np.linalg.norm(skew.ravel()) / math.sqrt(2.0))
    cos_a = min(1.0, max(-1.0, (np.trace(q) - 1.0) / 2.0))
    return float(math.atan2(sin_a, cos_a))


def translation_error(t: np.ndarray, t_hat: np.ndarray) -> float:
    """Euclidean distance between two translation vectors."""
    t = as_float_array(t, "t", (3,))
    t_hat = as_float_array(t_hat, "t_hat", (3,))
    return float(np.linalg.norm(t - t_hat))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; the matrix is [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class PixelGrid:
    """Image raster; pixel i = (row, col) with row = i // width, col = i % width."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.width}x{self.height}")

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @cached_property
    def centers(self) -> np.ndarray:
        """(N, 2) pixel-center coordinates (u, v), row-major order."""
        cols = np.tile(np.arange(self.width), self.height)
        rows = np.repeat(np.arange(self.height), self.width)
        out = np.stack([cols + 0.5, rows + 0.5], axis=1).astype(np.float64)
        out.setflags(write=False)
        return out

    def pixel_of(self, index: int) -> tuple[int, int]:
        return index // self.width, index % self.width


def pixel_rays(intrinsics: Intrinsics, uv: np.ndarray) -> np.ndarray:
    """Camera-frame ray per pixel coordinate: k^-1 (u, v, 1), so z = 1.

    Multiplying a ray by the pixel's depth gives the camera-frame point.
    """
    uv = np.asarray(uv, dtype=np.float64)
    x = (uv[..., 0] - intrinsics.cx) / intrinsics.fx
    y = (uv[..., 1] - intrinsics.cy) / intrinsics.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def backproject(
    depth: np.ndarray,
    intrinsics: Intrinsics,
    grid: PixelGrid,
    valid: np.ndarray | None = None,
) -> np.ndarray:
    """Lift a depth map to camera-frame points: y_i = d_i k^-1 u_i.

    Returns an (M, 3) array over the valid pixels in row-major order. Raises
    if any valid pixel carries a non-finite depth, naming the pixel.
    """
    depth = np.asarray(depth, dtype=np.float64).reshape(-1)
    if depth.shape[0] != grid.n_pixels:
        raise ValueError(
            f"depth has {depth.shape[0]} entries, grid expects {grid.n_pixels}"
        )
    if valid is None:
        valid = np.ones(grid.n_pixels, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool).reshape(-1)
        if valid.shape[0] != grid.n_pixels:
            raise ValueError("validity mask does not match grid size")
    bad = valid & ~np.isfinite(depth)
    if np.any(bad):
        row, col = grid.pixel_of(int(np.flatnonzero(bad)[0]))
        raise ValueError(f"non-finite depth at valid pixel (row={row}, col={col})")
    rays = pixel_rays(intrinsics, grid.centers)
    return depth[valid, None] * rays[valid]


def project_to_depth(
    points: np.ndarray,
    pose: Pose,
    intrinsics: Intrinsics,
    grid: PixelGrid,
) -> tuple[np.ndarray, np.ndarray]:
    """Render global points into a z-buffered depth map from the given pose.

    Each point is moved to the camera frame, y = R^T (x - t), projected to the
    nearest pixel, and its z written there if positive and on the grid; the
    nearest depth wins. Returns (depth, valid) flat arrays; dropped points
    (behind the camera or off-grid) simply leave pixels invalid.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pose.inverse().apply(pts)
    z = cam[:, 2]
    front = z > 0
    cam = cam[front]
    z = z[front]
    u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    col = np.floor(u).astype(np.int64)
    row = np.floor(v).astype(np.int64)
    inside = (col >= 0) & (col < grid.width) & (row >= 0) & (row < grid.height)
    idx = row[inside] * grid.width + col[inside]
    buf = np.full(grid.n_pixels, np.inf)
    np.minimum.at(buf, idx, z[inside])
    valid = np.isfinite(buf)
    depth = np.where(valid, buf, 0.0)
    return depth, valid
