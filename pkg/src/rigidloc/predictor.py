"""Per-scene coordinate predictor: a small MLP over pixel Fourier features.

Each pixel's input is a Fourier encoding of its normalized (u, v) coordinates
concatenated with a learned per-frame embedding vector. Three output heads
share the trunk: 3 channels of global coordinates (as offsets from the
dataset mean), 1 depth channel (offset from the mean depth), and 1 weight
logit squashed by a sigmoid.

The final layer is zero-initialized so the untrained model predicts exactly
the dataset mean everywhere with weights 0.5; early poses then stay tame.
Forward/backward are plain numpy; backward returns gradients for every
parameter block plus the embedding.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "fourier_features",
    "initial_embedding",
    "init_mlp_params",
    "mlp_forward",
    "mlp_backward",
    "sigmoid",
]

HEAD_CHANNELS = 5  # 3 global coordinates + depth + weight logit


def fourier_features(uv_norm: np.ndarray, num_frequencies: int) -> np.ndarray:
    """Encode (N, 2) normalized coordinates as [c, sin/cos(2 pi f c)] per axis.

    Frequencies are 1, 2, 4, ..., 2^(num_frequencies - 1). Output width is
    2 * (1 + 2 * num_frequencies).
    """
    uv = np.asarray(uv_norm, dtype=np.float64)
    feats = [uv]
    for k in range(num_frequencies):
        arg = (2.0 ** k) * 2.0 * np.pi * uv
        feats.append(np.sin(arg))
        feats.append(np.cos(arg))
    return np.concatenate(feats, axis=1)


def initial_embedding(
    sequence: int, time: float, num_sequences: int, frames_per_sequence: int, dim: int
) -> np.ndarray:
    """Smooth deterministic embedding init from the frame's (sequence, time).

    Temporally adjacent frames start with nearby embeddings, which keeps
    embedding interpolation for held-out frames meaningful. Dimensions beyond
    the eight base features are zero.
    """
    tau = time / max(frames_per_sequence - 1, 1)
    sig = sequence / max(num_sequences - 1, 1)
    base = np.array(
        [
            sig,
            tau,
            np.sin(np.pi * tau),
            np.cos(np.pi * tau),
            np.sin(2.0 * np.pi * tau),
            np.cos(2.0 * np.pi * tau),
            np.sin(np.pi * sig),
            np.cos(np.pi * sig),
        ]
    )
    e = np.zeros(dim)
    n = min(dim, base.size)
    e[:n] = 0.5 * base[:n]
    return e


def init_mlp_params(
    input_dim: int, hidden_sizes, rng: np.random.Generator
) -> dict:
    """He-initialized hidden layers; zero-initialized output layer."""
    sizes = [input_dim, *hidden_sizes, HEAD_CHANNELS]
    params = {}
    last = len(sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i == last:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f"w{i}"] = w
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def _num_layers(params: dict) -> int:
    return sum(1 for k in params if k.startswith("w"))


def mlp_forward(params: dict, x: np.ndarray) -> tuple[np.ndarray, list]:
    """ReLU MLP forward pass; returns (output (N, 5), cache for backward)."""
    n_layers = _num_layers(params)
    cache = [x]
    h = x
    for i in range(n_layers):
        z = h @ params[f"w{i}"] + params[f"b{i}"]
        if i < n_layers - 1:
            z = np.maximum(z, 0.0)
        cache.append(z)
        h = z
    return h, cache


def mlp_backward(params: dict, cache: list, grad_out: np.ndarray) -> tuple[dict, np.ndarray]:
    """Backward pass; returns (parameter gradients, gradient wrt the input)."""
    n_layers = _num_layers(params)
    grads = {}
    g = grad_out
    for i in reversed(range(n_layers)):
        h_in = cache[i]
        if i < n_layers - 1:
            g = g * (cache[i + 1] > 0.0)
        grads[f"w{i}"] = h_in.T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params[f"w{i}"].T
    return grads, g


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
