"""End-to-end training of the scene predictor through the rigid alignment.

Per iteration a batch of consecutive-frame windows is sampled from random
sequences, every frame is predicted (point map, depth, weights), the two maps
are aligned per frame by the weighted closed-form solve, and the full loss
network (direct terms plus pose and along/across relative-pose constraints)
is evaluated. Gradients flow back through the alignment's SVD differential
into the MLP and the per-frame embeddings; Adam with decoupled weight decay
updates everything.

Failure policy: frames whose alignment is degenerate contribute no
pose-dependent terms; frames whose SVD gradient is ill-conditioned keep their
forward loss but their pose-term gradient is dropped for that step. Both are
counted and logged, never fatal. A non-finite loss or parameter aborts
training with the last good state attached to the raised DivergenceError.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .alignment import (
    AlignmentError,
    IllConditionedGradient,
    kabsch_gradient,
    weighted_kabsch,
)
from .geometry import (
    Intrinsics,
    PixelGrid,
    Pose,
    pixel_rays,
    relative_pose,
    rotation_angle_error,
    translation_error,
)
from .losses import (
    LOSS_TERMS,
    FramePrediction,
    SequenceBatch,
    across_pairs,
    along_pairs,
    total_loss,
)
from .optim import AdamState, adam_step, clip_by_global_norm, global_norm
from .predictor import (
    fourier_features,
    init_mlp_params,
    initial_embedding,
    mlp_backward,
    mlp_forward,
    sigmoid,
)
from .scene import Dataset, sparsify

__all__ = [
    "TrainConfig",
    "ScenePredictor",
    "TrainResult",
    "DivergenceError",
    "train",
    "localize",
    "median_low",
]

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training hit a non-finite value; carries the last good state."""

    def __init__(self, message, predictor=None, adam_state=None, step=None, metrics=None):
        super().__init__(message)
        self.predictor = predictor
        self.adam_state = adam_state
        self.step = step
        self.metrics = metrics


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1200
    sequences_per_batch: int = 2
    frames_per_sequence: int = 8
    sparsity: float = 1.0
    disabled_terms: tuple = ()
    seed: int = 0
    # 3e-3 converges in ~1000 steps at desk scale; beta/eps/decay defaults
    # follow the standard training configuration
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    clip_norm: float = 10.0
    hidden_sizes: tuple = (64, 64)
    num_frequencies: int = 4
    embedding_dim: int = 8
    eval_every: int = 1

    def __post_init__(self):
        unknown = set(self.disabled_terms) - set(LOSS_TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms in disabled_terms: {sorted(unknown)}")
        if not (0.0 < self.sparsity <= 1.0):
            raise ValueError(f"sparsity must be in (0, 1], got {self.sparsity}")

    @property
    def enabled_terms(self) -> tuple:
        return tuple(t for t in LOSS_TERMS if t not in self.disabled_terms)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["disabled_terms"] = list(self.disabled_terms)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["disabled_terms"] = tuple(d.get("disabled_terms", ()))
        d["hidden_sizes"] = tuple(d.get("hidden_sizes", (64, 64)))
        return cls(**d)


def median_low(values) -> float:
    """Median with the lower-middle convention for even counts."""
    values = sorted(float(v) for v in values)
    if not values:
        raise ValueError("median of empty sequence")
    return values[(len(values) - 1) // 2]


class ScenePredictor:
    """Predictor state bound to one scene: MLP, embeddings, camera model.

    Frames are addressed by (sequence, time). Registered frames own an
    embedding row; unregistered times are served by linear interpolation of
    the two temporally nearest registered frames in the same sequence (the
    held-out evaluation path).
    """

    def __init__(
        self,
        grid: PixelGrid,
        intrinsics: Intrinsics,
        frame_keys,
        mean_point: np.ndarray,
        mean_depth: float,
        hidden_sizes,
        num_frequencies: int,
        embedding_dim: int,
        params: dict,
    ):
        self.grid = grid
        self.intrinsics = intrinsics
        self.frame_keys = [(int(s), float(t)) for s, t in frame_keys]
        self._row = {key: i for i, key in enumerate(self.frame_keys)}
        self.mean_point = np.asarray(mean_point, dtype=np.float64).reshape(3)
        self.mean_depth = float(mean_depth)
        self.hidden_sizes = tuple(hidden_sizes)
        self.num_frequencies = int(num_frequencies)
        self.embedding_dim = int(embedding_dim)
        self.params = params
        centers = grid.centers
        uv_norm = centers / np.array([grid.width, grid.height], dtype=np.float64)
        self.pixel_features = fourier_features(uv_norm, self.num_frequencies)
        self.rays = pixel_rays(intrinsics, centers)

    @classmethod
    def create(cls, dataset: Dataset, cfg: TrainConfig) -> "ScenePredictor":
        frames = dataset.all_train_frames()
        keys = [(f.sequence, f.time) for f in frames]
        pts = np.concatenate([f.target.point_map[f.target.valid_mask] for f in frames])
        depths = np.concatenate([f.target.depth[f.target.valid_mask] for f in frames])
        mean_point = pts.mean(axis=0)
        mean_depth = float(depths.mean())
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
        pixel_dim = 2 * (1 + 2 * cfg.num_frequencies)
        params = init_mlp_params(pixel_dim + cfg.embedding_dim, cfg.hidden_sizes, rng)
        params["embed"] = np.stack(
            [
                initial_embedding(
                    s, t, dataset.num_sequences, len(dataset.sequences[s]), cfg.embedding_dim
                )
                for s, t in keys
            ]
        )
        return cls(
            grid=dataset.grid,
            intrinsics=dataset.intrinsics,
            frame_keys=keys,
            mean_point=mean_point,
            mean_depth=mean_depth,
            hidden_sizes=cfg.hidden_sizes,
            num_frequencies=cfg.num_frequencies,
            embedding_dim=cfg.embedding_dim,
            params=params,
        )

    # -- embeddings -----------------------------------------------------

    def embedding_row(self, sequence: int, time: float) -> int | None:
        return self._row.get((int(sequence), float(time)))

    def embedding_for(self, sequence: int, time: float) -> np.ndarray:
        row = self.embedding_row(sequence, time)
        if row is not None:
            return self.params["embed"][row]
        neighbors = [(t, i) for (s, t), i in self._row.items() if s == sequence]
        if not neighbors:
            raise ValueError(f"no registered frames for sequence {sequence}")
        neighbors.sort()
        times = np.array([t for t, _ in neighbors])
        j = int(np.searchsorted(times, time))
        if j == 0:
            return self.params["embed"][neighbors[0][1]]
        if j == len(neighbors):
            return self.params["embed"][neighbors[-1][1]]
        (t0, i0), (t1, i1) = neighbors[j - 1], neighbors[j]
        a = (t1 - time) / (t1 - t0)
        return a * self.params["embed"][i0] + (1.0 - a) * self.params["embed"][i1]

    # -- forward --------------------------------------------------------

    def forward(self, embedding: np.ndarray):
        """Decode one frame; returns (point_map, depth, weights, cache)."""
        n = self.grid.n_pixels
        x = np.hstack([self.pixel_features, np.tile(embedding, (n, 1))])
        out, cache = mlp_forward(self.params, x)
        point_map = out[:, 0:3] + self.mean_point
        depth = out[:, 3] + self.mean_depth
        weights = sigmoid(out[:, 4])
        return point_map, depth, weights, cache

    def predict_frame(self, sequence: int, time: float) -> FramePrediction:
        """Forward pass plus one weighted alignment of the two maps."""
        point_map, depth, weights, _ = self.forward(self.embedding_for(sequence, time))
        cam_points = depth[:, None] * self.rays
        try:
            pose_hat = weighted_kabsch(point_map, cam_points, weights)
        except AlignmentError:
            pose_hat = None
        return FramePrediction(
            point_map=point_map, depth=depth, weights=weights, pose_hat=pose_hat
        )


def localize(predictor: ScenePredictor, sequence: int, time: float) -> Pose:
    """Single forward pass and one weighted alignment; no refinement.

    Raises AlignmentError when the predicted maps are degenerate.
    """
    point_map, depth, weights, _ = predictor.forward(
        predictor.embedding_for(sequence, time)
    )
    return weighted_kabsch(point_map, depth[:, None] * predictor.rays, weights)


# -- gradients of the pose-loss pieces ----------------------------------


def _rotation_angle_grad(rotation: np.ndarray, rotation_hat: np.ndarray) -> np.ndarray:
    """Euclidean gradient of rotation_angle_error wrt rotation_hat.

    Differentiates the implemented atan2(sin, cos) form, so it matches finite
    differences of the metric even for off-manifold perturbations. Returns
    zeros where the angle sits at its clamped extremes (flat regions).
    """
    q = rotation_hat @ rotation.T
    skew = (q - q.T) / 2.0
    fro = float(np.linalg.norm(skew.ravel()))
    s_raw = fro / math.sqrt(2.0)
    c_raw = (np.trace(q) - 1.0) / 2.0
    s = min(1.0, s_raw)
    c = min(1.0, max(-1.0, c_raw))
    denom = s * s + c * c
    if s_raw < 1e-12 or denom < 1e-12:
        return np.zeros((3, 3))
    g_q = np.zeros((3, 3))
    if s_raw < 1.0:
        # d theta / d s = c / (s^2 + c^2); d s / dQ = skew / (sqrt(2) |skew|_F)
        g_q += (c / denom) * skew / (2.0 * s_raw)
    if -1.0 < c_raw < 1.0:
        # d theta / d c = -s / (s^2 + c^2); d c / dQ = I / 2
        g_q += (-s / (2.0 * denom)) * np.eye(3)
    return g_q @ rotation


def _pose_loss_grad(pose: Pose, pose_hat: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of pose_loss(pose, pose_hat) wrt pose_hat's (R, t)."""
    diff = pose_hat.translation - pose.translation
    norm = float(np.linalg.norm(diff))
    g_t = diff / norm if norm > 1e-12 else np.zeros(3)
    return _rotation_angle_grad(pose.rotation, pose_hat.rotation), g_t


def _relpose_grad(pose_i: Pose, pose_j: Pose, hat_i: Pose, hat_j: Pose):
    """Gradients of relpose_loss wrt the two predicted poses.

    Returns ((gRi, gti), (gRj, gtj)). The ground-truth relative pose is a
    constant; only the predicted relative pose carries gradient.
    """
    rel = relative_pose(pose_i, pose_j)
    rel_hat = relative_pose(hat_i, hat_j)
    g_r_rel, g_t_rel = _pose_loss_grad(rel, rel_hat)
    ri, ti = hat_i.rotation, hat_i.translation
    rj, tj = hat_j.rotation, hat_j.translation
    # rel_hat.R = Ri^T Rj and rel_hat.t = Ri^T (tj - ti)
    g_ri = rj @ g_r_rel.T + np.outer(tj - ti, g_t_rel)
    g_rj = ri @ g_r_rel
    g_tj = ri @ g_t_rel
    g_ti = -g_tj
    return (g_ri, g_ti), (g_rj, g_tj)


@dataclass
class _FrameComputation:
    sequence: int
    time: float
    row: int
    target: object                # sparsified FrameTarget used for losses
    pred: FramePrediction
    cache: list
    internals: object | None      # AlignmentInternals when pose_hat exists
    grad_rotation: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    grad_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _forward_frame(predictor: ScenePredictor, sequence: int, time: float, target) -> _FrameComputation:
    row = predictor.embedding_row(sequence, time)
    if row is None:
        raise ValueError(f"frame ({sequence}, {time}) is not registered for training")
    point_map, depth, weights, cache = predictor.forward(predictor.params["embed"][row])
    cam_points = depth[:, None] * predictor.rays
    try:
        pose_hat, internals = weighted_kabsch(
            point_map, cam_points, weights, return_internals=True
        )
    except AlignmentError:
        pose_hat, internals = None, None
    pred = FramePrediction(
        point_map=point_map, depth=depth, weights=weights, pose_hat=pose_hat
    )
    return _FrameComputation(sequence, time, row, target, pred, cache, internals)


def _backward(predictor: ScenePredictor, comps, enabled) -> tuple[dict, int]:
    """Gradient of the enabled total loss wrt all parameter blocks.

    ``comps`` is the K x N nested batch of _FrameComputation. Returns
    (grads, frames whose pose gradient was dropped as ill-conditioned).
    """
    flat = [c for seq in comps for c in seq]
    n_frames = len(flat)
    with_pose = [c for c in flat if c.pred.has_pose]
    grads = {k: np.zeros_like(p) for k, p in predictor.params.items()}
    skipped_grad = 0

    # direct per-pixel terms; each frame's mean scaled by the frame average
    per_frame = {id(c): [np.zeros_like(c.pred.point_map), np.zeros(c.pred.depth.shape)] for c in flat}
    if "l3d" in enabled:
        for c in flat:
            mask = c.target.valid_mask
            m = int(mask.sum())
            if m == 0:
                continue
            r = c.pred.point_map[mask] - c.target.point_map[mask]
            norms = np.linalg.norm(r, axis=1)
            safe = norms > 1e-12
            g = np.zeros_like(r)
            g[safe] = r[safe] / norms[safe, None]
            per_frame[id(c)][0][mask] += g / (m * n_frames)
    if "l_depth" in enabled:
        for c in flat:
            mask = c.target.valid_mask
            m = int(mask.sum())
            if m == 0:
                continue
            per_frame[id(c)][1][mask] += np.sign(c.pred.depth[mask] - c.target.depth[mask]) / (
                m * n_frames
            )

    # pose-dependent terms accumulate (dL/dR, dL/dt) per frame
    if "l_pose" in enabled and with_pose:
        scale = 1.0 / len(with_pose)
        for c in with_pose:
            g_r, g_t = _pose_loss_grad(c.target.pose, c.pred.pose_hat)
            c.grad_rotation += scale * g_r
            c.grad_translation += scale * g_t

    k_seq = len(comps)
    n_per = len(comps[0]) if comps else 0
    for term, pairs in (
        ("l_along", along_pairs(k_seq, n_per)),
        ("l_across", across_pairs(k_seq, n_per)),
    ):
        if term not in enabled:
            continue
        for (ka, ia), (kb, ib) in pairs:
            ca, cb = comps[ka][ia], comps[kb][ib]
            if not (ca.pred.has_pose and cb.pred.has_pose):
                continue
            (g_ra, g_ta), (g_rb, g_tb) = _relpose_grad(
                ca.target.pose, cb.target.pose, ca.pred.pose_hat, cb.pred.pose_hat
            )
            ca.grad_rotation += g_ra
            ca.grad_translation += g_ta
            cb.grad_rotation += g_rb
            cb.grad_translation += g_tb

    pixel_dim = predictor.pixel_features.shape[1]
    for c in flat:
        g_points, g_depth = per_frame[id(c)]
        if c.pred.has_pose and (np.any(c.grad_rotation) or np.any(c.grad_translation)):
            cam_points = c.pred.depth[:, None] * predictor.rays
            try:
                g_x, g_y, g_w = kabsch_gradient(
                    c.pred.point_map,
                    cam_points,
                    c.pred.weights,
                    c.grad_rotation,
                    c.grad_translation,
                    internals=c.internals,
                )
            except IllConditionedGradient:
                skipped_grad += 1
                logger.warning(
                    "dropping pose gradient for frame (%d, %s): ill-conditioned SVD",
                    c.sequence,
                    c.time,
                )
                g_x = g_y = g_w = None
            if g_x is not None:
                g_points = g_points + g_x
                g_depth = g_depth + (g_y * predictor.rays).sum(axis=1)
                g_logit_extra = g_w * c.pred.weights * (1.0 - c.pred.weights)
            else:
                g_logit_extra = np.zeros_like(c.pred.weights)
        else:
            g_logit_extra = np.zeros_like(c.pred.weights)

        d_out = np.zeros((predictor.grid.n_pixels, 5))
        d_out[:, 0:3] = g_points
        d_out[:, 3] = g_depth
        d_out[:, 4] = g_logit_extra
        if not np.any(d_out):
            continue
        p_grads, d_in = mlp_backward(predictor.params, c.cache, d_out)
        for k, g in p_grads.items():
            grads[k] += g
        grads["embed"][c.row] += d_in[:, pixel_dim:].sum(axis=0)

    return grads, skipped_grad


@dataclass
class TrainResult:
    predictor: ScenePredictor
    adam_state: AdamState
    metrics: list
    clip_events: int
    skipped_gradient_frames: int


def _sparse_targets(dataset: Dataset, cfg: TrainConfig) -> dict:
    out = {}
    for k, seq in enumerate(dataset.sequences):
        for i, frame in enumerate(seq):
            if cfg.sparsity >= 1.0:
                out[(frame.sequence, frame.time)] = frame.target
            else:
                seed = np.random.SeedSequence(cfg.seed, spawn_key=(7, k, i))
                out[(frame.sequence, frame.time)] = sparsify(
                    frame.target, cfg.sparsity, seed
                )
    return out


def _epoch_eval(predictor: ScenePredictor, dataset: Dataset, epoch: int, extra: dict) -> dict:
    t_errs, r_errs = [], []
    failures = 0
    weight_stats = []
    for frame in dataset.all_train_frames():
        pred = predictor.predict_frame(frame.sequence, frame.time)
        weight_stats.append(pred.weights)
        if not pred.has_pose:
            failures += 1
            continue
        t_errs.append(
            translation_error(frame.target.pose.translation, pred.pose_hat.translation)
        )
        r_errs.append(
            math.degrees(
                rotation_angle_error(frame.target.pose.rotation, pred.pose_hat.rotation)
            )
        )
    w = np.concatenate(weight_stats)
    record = {
        "epoch": epoch,
        "median_translation_error": median_low(t_errs) if t_errs else None,
        "median_rotation_error_deg": median_low(r_errs) if r_errs else None,
        "localization_failures": failures,
        "weight_mean": float(w.mean()),
        "weight_min": float(w.min()),
    }
    record.update(extra)
    return record


def train(dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    """Run the full training loop; deterministic for a given config.

    One epoch is enough iterations to cover the training frames once at the
    configured batch shape. Emits one LossReport record per step and one
    evaluation record per epoch into the returned metrics list.
    """
    if dataset.num_sequences < cfg.sequences_per_batch:
        raise ValueError(
            f"dataset has {dataset.num_sequences} sequences, batch wants {cfg.sequences_per_batch}"
        )
    for k, seq in enumerate(dataset.sequences):
        if len(seq) < cfg.frames_per_sequence:
            raise ValueError(
                f"sequence {k} has {len(seq)} frames, batch wants {cfg.frames_per_sequence}"
            )
    if dataset.num_sequences < 2 and "l_across" in cfg.enabled_terms:
        logger.warning("across-sequence loss requested but dataset has one sequence")

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    predictor = ScenePredictor.create(dataset, cfg)
    state = AdamState.zeros_like(predictor.params)
    sparse = _sparse_targets(dataset, cfg)
    enabled = cfg.enabled_terms

    n_frames_total = sum(len(s) for s in dataset.sequences)
    batch_frames = cfg.sequences_per_batch * cfg.frames_per_sequence
    steps_per_epoch = max(1, -(-n_frames_total // batch_frames))

    metrics: list = []
    clip_events = 0
    skipped_grad_total = 0
    step = 0
    last_good = (predictor.params, state, 0)

    for epoch in range(cfg.epochs):
        for _ in range(steps_per_epoch):
            seq_ids = rng.choice(dataset.num_sequences, size=cfg.sequences_per_batch, replace=False)
            comps = []
            targets = []
            for k in seq_ids:
                seq = dataset.sequences[k]
                start = int(rng.integers(0, len(seq) - cfg.frames_per_sequence + 1))
                window = seq[start : start + cfg.frames_per_sequence]
                comps.append(
                    [
                        _forward_frame(
                            predictor, f.sequence, f.time, sparse[(f.sequence, f.time)]
                        )
                        for f in window
                    ]
                )
                targets.append(tuple(sparse[(f.sequence, f.time)] for f in window))
            batch = SequenceBatch(tuple(targets))
            preds = [[c.pred for c in seq_c] for seq_c in comps]
            report = total_loss(batch, preds, enabled=enabled)
            if not np.isfinite(report.total):
                raise DivergenceError(
                    f"non-finite loss at step {step}",
                    predictor=_with_params(predictor, last_good[0]),
                    adam_state=last_good[1],
                    step=last_good[2],
                    metrics=metrics,
                )
            grads, skipped = _backward(predictor, comps, enabled)
            skipped_grad_total += skipped
            grads, clipped = clip_by_global_norm(grads, cfg.clip_norm)
            if clipped:
                clip_events += 1
                logger.debug("gradient clipped at step %d", step)
            metrics.append(report.to_record(step))
            if global_norm(grads) > 0.0:
                new_params, state = adam_step(
                    predictor.params,
                    grads,
                    state,
                    lr=cfg.learning_rate,
                    beta1=cfg.beta1,
                    beta2=cfg.beta2,
                    eps=cfg.eps,
                    weight_decay=cfg.weight_decay,
                )
                if not all(np.all(np.isfinite(p)) for p in new_params.values()):
                    raise DivergenceError(
                        f"non-finite parameters at step {step}",
                        predictor=_with_params(predictor, last_good[0]),
                        adam_state=last_good[1],
                        step=last_good[2],
                        metrics=metrics,
                    )
                predictor.params = new_params
                last_good = (new_params, state, step)
            step += 1
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            metrics.append(
                _epoch_eval(
                    predictor,
                    dataset,
                    epoch,
                    {"clip_events": clip_events, "skipped_gradient_frames": skipped_grad_total},
                )
            )

    return TrainResult(
        predictor=predictor,
        adam_state=state,
        metrics=metrics,
        clip_events=clip_events,
        skipped_gradient_frames=skipped_grad_total,
    )


def _with_params(predictor: ScenePredictor, params: dict) -> ScenePredictor:
    clone = ScenePredictor(
        grid=predictor.grid,
        intrinsics=predictor.intrinsics,
        frame_keys=predictor.frame_keys,
        mean_point=predictor.mean_point,
        mean_depth=predictor.mean_depth,
        hidden_sizes=predictor.hidden_sizes,
        num_frequencies=predictor.num_frequencies,
        embedding_dim=predictor.embedding_dim,
        params=params,
    )
    return clone
