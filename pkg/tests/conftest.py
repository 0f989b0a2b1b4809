"""Shared fixtures and independent oracles.

Oracles here deliberately avoid the package's own code paths: rotations come
from quaternions, pose composition from 4x4 homogeneous matrix products, and
rotation angles from the quaternion half-angle. Tests compare the package
against these rather than against itself.
"""

import math

import numpy as np
import pytest

from rigidloc.geometry import Pose


def quaternion_to_matrix(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(r):
    # Shepperd's method, branch on the largest diagonal term
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        return np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = math.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2
    q = np.zeros(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q


def quaternion_angle(r):
    """Oracle rotation angle of a rotation matrix, via the quaternion half-angle."""
    q = matrix_to_quaternion(r)
    q = q / np.linalg.norm(q)
    return 2.0 * math.atan2(np.linalg.norm(q[1:]), abs(q[0]))


def random_rotation(rng):
    return quaternion_to_matrix(rng.normal(size=4))


def random_pose(rng, scale=2.0):
    return Pose(random_rotation(rng), rng.normal(size=3) * scale)


def compose_oracle(a: Pose, b: Pose) -> np.ndarray:
    """4x4 homogeneous product, independent of Pose.compose."""
    return a.matrix44() @ b.matrix44()


@pytest.fixture
def rng():
    return np.random.default_rng(42)
