"""Weighted rigid alignment of corresponded 3D point sets, with gradients.

Given global-frame points x_i, camera-frame points y_i, and non-negative
weights w_i, the closed-form solve recovers the pose minimizing the weighted
squared residual sum_i w_i ||x_i - R y_i - t||^2:

    mu_x = sum(w x) / sum(w)        mu_y = sum(w y) / sum(w)
    H    = (Y - mu_y)^T diag(w) (X - mu_x)
    U S V^T = svd(H)
    s    = det(V U^T)
    R    = V diag(1, 1, s) U^T      t = -R mu_y + mu_x

The determinant correction s excludes reflections, so det(R) = +1 even for
planar or mirrored configurations. The objective is sometimes written with
the non-squared norm; the SVD solution minimizes the squared form, and both
costs are exposed (``alignment_cost`` and ``alignment_cost_sq``).

``kabsch_gradient`` backpropagates a loss gradient at (R, t) onto (X, Y, W)
through the SVD differential. Its contract is agreement with central finite
differences; ``finite_difference_gradient`` provides that oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_correspondences
from .geometry import Pose

__all__ = [
    "AlignmentError",
    "DegenerateAlignment",
    "IllConditionedGradient",
    "AlignmentInternals",
    "svd3",
    "kabsch",
    "weighted_kabsch",
    "alignment_cost",
    "alignment_cost_sq",
    "kabsch_gradient",
    "finite_difference_gradient",
]

# Below this total weight the centroids are undefined; fail loudly rather
# than return an arbitrary pose (a sigmoid weight head can drive weights to 0).
MIN_TOTAL_WEIGHT = 1e-12

# Rank test on the singular values of H, relative to the largest.
DEGENERATE_RTOL = 1e-9

# The SVD differential has 1/(s_i - s_j) factors; below this gap (relative to
# the largest singular value) the gradient is numerically meaningless.
GRADIENT_GAP_RTOL = 1e-8


class AlignmentError(ValueError):
    """Base class for alignment failures."""


class DegenerateAlignment(AlignmentError):
    """The correspondences do not determine a unique rigid transform."""


class IllConditionedGradient(AlignmentError):
    """Singular values too close for a stable SVD differential."""


@dataclass(frozen=True)
class AlignmentInternals:
    """Intermediates of a solve, as needed by the gradient."""

    mu_x: np.ndarray    # weighted centroid of x, (3,)
    mu_y: np.ndarray    # weighted centroid of y, (3,)
    xbar: np.ndarray    # centered x, (M, 3)
    ybar: np.ndarray    # centered y, (M, 3)
    u: np.ndarray       # left singular vectors of H, (3, 3)
    s: np.ndarray       # singular values, non-increasing, (3,)
    v: np.ndarray       # right singular vectors (columns), (3, 3)
    sign: float         # det(V U^T), the reflection correction


def svd3(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a 3x3 matrix: a = U diag(S) V^T with S sorted non-increasing.

    Returns V itself (not V^T). Always succeeds for finite input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite values")
    u, s, vt = np.linalg.svd(a)
    return u, s, vt.T


def _solve(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[Pose, AlignmentInternals]:
    total = float(w.sum())
    if total <= MIN_TOTAL_WEIGHT:
        raise AlignmentError("no effective correspondences (total weight is zero)")
    mu_x = (w[:, None] * x).sum(axis=0) / total
    mu_y = (w[:, None] * y).sum(axis=0) / total
    xbar = x - mu_x
    ybar = y - mu_y
    h = ybar.T @ (w[:, None] * xbar)
    u, s, v = svd3(h)
    if s[1] <= DEGENERATE_RTOL * max(s[0], MIN_TOTAL_WEIGHT):
        raise DegenerateAlignment(
            "degenerate configuration: correspondences have effective rank < 2"
        )
    sign = float(np.sign(np.linalg.det(v @ u.T)))
    r = v @ np.diag([1.0, 1.0, sign]) @ u.T
    t = -r @ mu_y + mu_x
    pose = Pose(r, t)
    return pose, AlignmentInternals(mu_x, mu_y, xbar, ybar, u, s, v, sign)


def weighted_kabsch(x, y, weights=None, return_internals: bool = False):
    """Pose aligning camera-frame points y onto global-frame points x.

    Minimizes sum_i w_i ||x_i - R y_i - t||^2 in closed form. Raises
    AlignmentError when the total weight vanishes and DegenerateAlignment
    when the configuration does not pin down a unique rotation (for
    example, all effectively-weighted points collinear).
    """
    x, y, w = check_correspondences(x, y, weights)
    pose, internals = _solve(x, y, w)
    if return_internals:
        return pose, internals
    return pose


def kabsch(x, y, return_internals: bool = False):
    """Unweighted alignment; identical to weighted_kabsch with unit weights."""
    return weighted_kabsch(x, y, None, return_internals=return_internals)


def alignment_cost(x, y, weights, pose: Pose) -> float:
    """Weighted sum of non-squared residual norms, sum w ||x - R y - t||."""
    x, y, w = check_correspondences(x, y, weights)
    residual = x - pose.apply(y)
    return float((w * np.linalg.norm(residual, axis=1)).sum())


def alignment_cost_sq(x, y, weights, pose: Pose) -> float:
    """Weighted sum of squared residual norms, the quantity the solver minimizes."""
    x, y, w = check_correspondences(x, y, weights)
    residual = x - pose.apply(y)
    return float((w * (residual * residual).sum(axis=1)).sum())


def _svd_backward(u, s, v, grad_u, grad_v) -> np.ndarray:
    """Gradient wrt H of a loss with gradients grad_u, grad_v at U, V.

    Standard SVD differential for square input with distinct singular values;
    the gradient wrt the singular values themselves is zero for our use.
    """
    eye = np.eye(3, dtype=bool)
    f = s[None, :] - s[:, None]
    f = 1.0 / np.where(eye, np.inf, f)
    g = 1.0 / np.where(eye, np.inf, s[None, :] + s[:, None])
    udu = u.T @ grad_u
    vdv = v.T @ grad_v
    su = (f + g) * (udu - udu.T) / 2.0
    sv = (f - g) * (vdv - vdv.T) / 2.0
    return u @ (su + sv) @ v.T


def kabsch_gradient(
    x,
    y,
    weights,
    grad_rotation,
    grad_translation,
    internals: AlignmentInternals | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagate (dL/dR, dL/dt) onto the correspondences.

    Returns (dL/dX, dL/dY, dL/dW). ``internals`` may be passed to reuse a
    previous solve; otherwise the solve is repeated here. Raises
    IllConditionedGradient when the singular values of H are too close
    (gap <= 1e-8 * s_max), where the SVD differential blows up; callers
    decide the fallback policy.
    """
    x, y, w = check_correspondences(x, y, weights)
    if internals is None:
        _, internals = _solve(x, y, w)
    u, s, v, sign = internals.u, internals.s, internals.v, internals.sign
    gap = min(s[0] - s[1], s[1] - s[2])
    if gap <= GRADIENT_GAP_RTOL * max(s[0], MIN_TOTAL_WEIGHT):
        raise IllConditionedGradient(
            f"ill-conditioned SVD gradient: singular value gap {gap:.3e} "
            f"below threshold for s_max {s[0]:.3e}"
        )
    d = np.diag([1.0, 1.0, sign])
    r = v @ d @ u.T
    g_r = np.asarray(grad_rotation, dtype=np.float64).reshape(3, 3).copy()
    g_t = np.asarray(grad_translation, dtype=np.float64).reshape(3)

    # t = -R mu_y + mu_x
    g_mu_x = g_t.copy()
    g_mu_y = -(r.T @ g_t)
    g_r += -np.outer(g_t, internals.mu_y)

    # R = V diag(1, 1, sign) U^T; sign is locally constant
    g_u = g_r.T @ v @ d
    g_v = g_r @ u @ d
    g_h = _svd_backward(u, s, v, g_u, g_v)

    # H = sum_j w_j ybar_j xbar_j^T
    g_xbar = w[:, None] * (internals.ybar @ g_h)
    g_ybar = w[:, None] * (internals.xbar @ g_h.T)
    g_w = np.einsum("ab,ja,jb->j", g_h, internals.ybar, internals.xbar)

    # centering: xbar = x - mu_x, mu_x = sum(w x) / sum(w)
    total = float(w.sum())
    g_mu_x -= g_xbar.sum(axis=0)
    g_mu_y -= g_ybar.sum(axis=0)
    g_x = g_xbar + np.outer(w, g_mu_x) / total
    g_y = g_ybar + np.outer(w, g_mu_y) / total
    # d mu_x / d w_j = (x_j - mu_x) / total, and likewise for y
    g_w += (internals.xbar @ g_mu_x) / total
    g_w += (internals.ybar @ g_mu_y) / total
    return g_x, g_y, g_w


def finite_difference_gradient(f, p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    p = np.asarray(p, dtype=np.float64)
    grad = np.zeros_like(p)
    for i in range(p.size):
        step = np.zeros_like(p)
        step[i] = h
        hi = f(p + step)
        lo = f(p - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite function value near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad
