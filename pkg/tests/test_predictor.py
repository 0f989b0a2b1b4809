"""MLP predictor: encoding shapes, initialization contract, backward pass."""

import numpy as np
import pytest

from rigidloc.alignment import finite_difference_gradient
from rigidloc.predictor import (
    fourier_features,
    init_mlp_params,
    initial_embedding,
    mlp_backward,
    mlp_forward,
    sigmoid,
)
from rigidloc.scene import default_config, generate_scene
from rigidloc.trainer import ScenePredictor, TrainConfig


class TestFourierFeatures:
    def test_width(self):
        uv = np.zeros((7, 2))
        assert fourier_features(uv, 4).shape == (7, 2 * (1 + 2 * 4))

    def test_contains_raw_coordinates(self):
        uv = np.array([[0.25, 0.75]])
        feats = fourier_features(uv, 1)
        np.testing.assert_allclose(feats[0, :2], [0.25, 0.75])

    def test_first_frequency_values(self):
        uv = np.array([[0.25, 0.0]])
        feats = fourier_features(uv, 1)
        # sin(2 pi 0.25) = 1, cos(2 pi 0.25) = 0
        np.testing.assert_allclose(feats[0, 2:4], [1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(feats[0, 4:6], [0.0, 1.0], atol=1e-15)


class TestInitialEmbedding:
    def test_adjacent_frames_are_close(self):
        e0 = initial_embedding(0, 3.0, 2, 8, 8)
        e1 = initial_embedding(0, 4.0, 2, 8, 8)
        far = initial_embedding(1, 0.0, 2, 8, 8)
        assert np.linalg.norm(e1 - e0) < np.linalg.norm(far - e0)

    def test_midpoint_near_interpolation(self):
        # linear interpolation of neighbors lands near the half-step encoding
        # (chord-vs-arc error of the sinusoid components stays small)
        e0 = initial_embedding(0, 3.0, 2, 8, 8)
        e1 = initial_embedding(0, 4.0, 2, 8, 8)
        mid = initial_embedding(0, 3.5, 2, 8, 8)
        assert np.linalg.norm((e0 + e1) / 2 - mid) < 0.1


class TestSigmoid:
    def test_extremes_are_stable(self):
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        assert out[0] == 0.0 and out[1] == 0.5 and out[2] == 1.0
        assert np.isfinite(out).all()


class TestMlp:
    def test_backward_matches_fd(self, rng):
        params = init_mlp_params(6, (5, 4), rng)
        # randomize every block (zero biases would park ReLU inputs exactly on
        # the kink, where central differences are one-sided)
        for name in params:
            params[name] = params[name] + rng.normal(size=params[name].shape) * 0.3
        x = rng.normal(size=(9, 6))
        target = rng.normal(size=(9, 5))

        def loss(p):
            out, _ = mlp_forward(p, x)
            return float(((out - target) ** 2).sum())

        out, cache = mlp_forward(params, x)
        grads, d_in = mlp_backward(params, cache, 2.0 * (out - target))

        for name in params:
            def f(flat, name=name):
                p = {k: v.copy() for k, v in params.items()}
                p[name] = flat.reshape(params[name].shape)
                return loss(p)

            fd = finite_difference_gradient(f, params[name].ravel(), h=1e-6)
            denom = max(np.abs(fd).max(), 1e-9)
            assert np.abs(grads[name].ravel() - fd).max() / denom < 1e-6

        # input gradient too (feeds the embedding gradient)
        def f_in(flat):
            out, _ = mlp_forward(params, flat.reshape(9, 6))
            return float(((out - target) ** 2).sum())

        fd_in = finite_difference_gradient(f_in, x.ravel(), h=1e-6)
        assert np.abs(d_in.ravel() - fd_in).max() / max(np.abs(fd_in).max(), 1e-9) < 1e-6


@pytest.fixture(scope="module")
def setup():
    dataset = generate_scene(default_config(resolution=(8, 8)))
    cfg = TrainConfig(hidden_sizes=(16,), num_frequencies=2, embedding_dim=4)
    return dataset, ScenePredictor.create(dataset, cfg)


class TestScenePredictor:
    def test_zero_init_predicts_dataset_means(self, setup):
        dataset, predictor = setup
        pred = predictor.predict_frame(0, 0.0)
        pts = np.concatenate(
            [f.target.point_map[f.target.valid_mask] for f in dataset.all_train_frames()]
        )
        depths = np.concatenate(
            [f.target.depth[f.target.valid_mask] for f in dataset.all_train_frames()]
        )
        np.testing.assert_allclose(pred.point_map, np.tile(pts.mean(axis=0), (64, 1)))
        np.testing.assert_allclose(pred.depth, np.full(64, depths.mean()))
        np.testing.assert_allclose(pred.weights, np.full(64, 0.5))
        # a constant point map cannot be aligned: the no-pose flag must be set
        assert not pred.has_pose

    def test_output_shapes(self, setup):
        dataset, predictor = setup
        pred = predictor.predict_frame(1, 2.0)
        n = dataset.grid.n_pixels
        assert pred.point_map.shape == (n, 3)
        assert pred.depth.shape == (n,)
        assert pred.weights.shape == (n,)

    def test_deterministic(self, setup):
        _, predictor = setup
        a = predictor.predict_frame(0, 1.0)
        b = predictor.predict_frame(0, 1.0)
        assert (a.point_map == b.point_map).all()
        assert (a.depth == b.depth).all()
        assert (a.weights == b.weights).all()

    def test_weights_in_open_interval(self, setup, rng):
        _, predictor = setup
        # randomize parameters: sigmoid output must stay inside (0, 1)
        params = {k: v + rng.normal(size=v.shape) for k, v in predictor.params.items()}
        predictor2 = ScenePredictor(
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
        pred = predictor2.predict_frame(0, 0.0)
        assert (pred.weights > 0.0).all() and (pred.weights < 1.0).all()

    def test_embedding_interpolation(self, setup, rng):
        _, predictor = setup
        predictor.params["embed"] = rng.normal(size=predictor.params["embed"].shape)
        e_lo = predictor.embedding_for(0, 2.0)
        e_hi = predictor.embedding_for(0, 3.0)
        e_mid = predictor.embedding_for(0, 2.5)
        np.testing.assert_allclose(e_mid, (e_lo + e_hi) / 2, atol=1e-12)
        # outside the covered range: clamp to the nearest registered frame
        np.testing.assert_allclose(predictor.embedding_for(0, -3.0), predictor.embedding_for(0, 0.0))
        with pytest.raises(ValueError, match="no registered frames"):
            predictor.embedding_for(99, 0.0)
