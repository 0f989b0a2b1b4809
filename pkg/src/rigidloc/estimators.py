"""Scikit-learn style estimator wrappers over the functional core.

These follow the sklearn protocol by duck typing (``get_params`` /
``set_params`` introspected from ``__init__``, fitted attributes with a
trailing underscore), so they compose with ``sklearn.base.clone``, pipelines
and the like without importing scikit-learn here.
"""

from __future__ import annotations

import inspect

import numpy as np

from ._validation import check_correspondences
from .alignment import alignment_cost_sq, weighted_kabsch
from .cli import EvalReport, evaluate_split
from .trainer import TrainConfig, localize, train

__all__ = ["RigidAlignment", "SceneCoordinateLocalizer"]


class _ParamsMixin:
    """get_params / set_params over the constructor signature."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return sorted(
            p.name
            for p in sig.parameters.values()
            if p.name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(
                    f"invalid parameter {key!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, key, value)
        return self


class RigidAlignment(_ParamsMixin):
    """Estimator for the rigid transform mapping source points onto targets.

    ``fit(X, y, sample_weight)`` solves the weighted closed-form alignment of
    source points X (camera frame) to target points y (global frame), setting
    ``rotation_``, ``translation_`` and ``pose_``. ``transform`` applies the
    fitted transform to points.
    """

    def __init__(self):
        pass

    def fit(self, X, y, sample_weight=None):
        X, y, w = check_correspondences(X, y, sample_weight)
        self.pose_ = weighted_kabsch(y, X, w)
        self.rotation_ = self.pose_.rotation
        self.translation_ = self.pose_.translation
        return self

    def _check_fitted(self):
        if not hasattr(self, "pose_"):
            raise ValueError("RigidAlignment instance is not fitted yet; call fit first")

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        return self.pose_.apply(np.asarray(X, dtype=np.float64))

    def fit_transform(self, X, y, sample_weight=None) -> np.ndarray:
        return self.fit(X, y, sample_weight).transform(X)

    def inverse_transform(self, y) -> np.ndarray:
        self._check_fitted()
        return self.pose_.inverse().apply(np.asarray(y, dtype=np.float64))

    def score(self, X, y, sample_weight=None) -> float:
        """Negative mean weighted squared residual (higher is better)."""
        self._check_fitted()
        X, y, w = check_correspondences(X, y, sample_weight)
        return -alignment_cost_sq(y, X, w, self.pose_) / float(w.sum())


class SceneCoordinateLocalizer(_ParamsMixin):
    """Estimator that learns to localize camera frames in one scene.

    ``fit(dataset)`` trains the scene predictor end to end through the
    weighted alignment under the configured loss network. ``predict`` maps
    (sequence, time) frame references to camera-to-world 3x4 pose matrices;
    times between training frames use embedding interpolation.
    """

    def __init__(
        self,
        epochs: int = 1200,
        learning_rate: float = 3e-3,
        sparsity: float = 1.0,
        disabled_terms: tuple = (),
        seed: int = 0,
        sequences_per_batch: int = 2,
        frames_per_sequence: int = 8,
        weight_decay: float = 5e-4,
        clip_norm: float = 10.0,
        hidden_sizes: tuple = (64, 64),
        num_frequencies: int = 4,
        embedding_dim: int = 8,
    ):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.sparsity = sparsity
        self.disabled_terms = disabled_terms
        self.seed = seed
        self.sequences_per_batch = sequences_per_batch
        self.frames_per_sequence = frames_per_sequence
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.hidden_sizes = hidden_sizes
        self.num_frequencies = num_frequencies
        self.embedding_dim = embedding_dim

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            sparsity=self.sparsity,
            disabled_terms=tuple(self.disabled_terms),
            seed=self.seed,
            sequences_per_batch=self.sequences_per_batch,
            frames_per_sequence=self.frames_per_sequence,
            weight_decay=self.weight_decay,
            clip_norm=self.clip_norm,
            hidden_sizes=tuple(self.hidden_sizes),
            num_frequencies=self.num_frequencies,
            embedding_dim=self.embedding_dim,
            eval_every=0,
        )

    def fit(self, dataset, y=None):
        result = train(dataset, self._config())
        self.predictor_ = result.predictor
        self.metrics_ = result.metrics
        return self

    def _check_fitted(self):
        if not hasattr(self, "predictor_"):
            raise ValueError(
                "SceneCoordinateLocalizer instance is not fitted yet; call fit first"
            )

    def predict(self, frames) -> np.ndarray:
        """3x4 camera-to-world pose per (sequence, time) reference."""
        self._check_fitted()
        out = []
        for sequence, time in frames:
            pose = localize(self.predictor_, int(sequence), float(time))
            out.append(pose.matrix34())
        return np.stack(out)

    def evaluate(self, dataset, split: str = "train") -> EvalReport:
        self._check_fitted()
        return evaluate_split(self.predictor_, dataset, split)
