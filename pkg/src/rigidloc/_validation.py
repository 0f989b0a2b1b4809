"""Input validation helpers shared across the package.

All numeric APIs accept array-likes and are normalized here to contiguous
float64 arrays. Estimator-facing checks raise ValueError with the offending
argument named, so failures point at user input rather than internals.
"""

from __future__ import annotations

import numpy as np


def as_float_array(a, name: str, shape: tuple | None = None) -> np.ndarray:
    """Coerce to a float64 ndarray, optionally enforcing an exact shape."""
    arr = np.asarray(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def check_finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_points(a, name: str) -> np.ndarray:
    """Validate an (M, 3) point array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must be an (M, 3) array, got shape {arr.shape}")
    return arr


def check_correspondences(x, y, weights=None):
    """Validate corresponded point sets and optional per-pair weights.

    Returns (x, y, w) as float64 arrays with w defaulting to ones. Requires
    M >= 3 rows, finite values, and non-negative weights.
    """
    x = check_points(x, "x")
    y = check_points(y, "y")
    if x.shape[0] != y.shape[0]:
        raise ValueError(
            f"x and y must have the same number of rows, got {x.shape[0]} and {y.shape[0]}"
        )
    m = x.shape[0]
    if m < 3:
        raise ValueError(f"need at least 3 correspondences, got {m}")
    if weights is None:
        w = np.ones(m, dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (m,):
            raise ValueError(f"weights must have shape ({m},), got {w.shape}")
        check_finite(w, "weights")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
    check_finite(x, "x")
    check_finite(y, "y")
    return x, y, w


def check_rotation(r, atol: float = 1e-9) -> np.ndarray:
    """Validate a 3x3 rotation matrix: orthonormal with determinant +1."""
    r = as_float_array(r, "rotation", (3, 3))
    err = np.abs(r @ r.T - np.eye(3)).max()
    if err > atol:
        raise ValueError(f"rotation is not orthonormal (max |R Rt - I| = {err:.3e})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > atol:
        raise ValueError(f"rotation determinant must be +1, got {det!r}")
    return r
