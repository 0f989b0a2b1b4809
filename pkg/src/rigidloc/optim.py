"""Adam with decoupled weight decay, over named parameter blocks.

Parameters and gradients are dicts of arrays keyed by block name. The update
is functional: ``adam_step`` returns fresh params and state, leaving inputs
untouched, which keeps training trivially reproducible.

Defaults follow the training configuration used throughout this project:
beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight decay 5e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AdamState", "adam_step", "global_norm", "clip_by_global_norm"]


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators per parameter block plus step count."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[dict, AdamState]:
    """One optimizer step; returns (new_params, new_state).

    Weight decay is decoupled: p <- p - lr * wd * p before the Adam update.
    Moment estimates are bias-corrected. Raises on non-finite gradients,
    naming the offending parameter block.
    """
    if set(params) != set(grads):
        raise ValueError(
            f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}"
        )
    t = state.step + 1
    new_params = {}
    new_m = {}
    new_v = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for block '{name}'")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter block '{name}'")
        p = p - lr * weight_decay * p
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, step=t)


def global_norm(grads: dict) -> float:
    """Euclidean norm over all gradient blocks jointly."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, bool]:
    """Scale all blocks so the joint norm is at most max_norm.

    Returns (grads, clipped); grads are shared, not copied, when no clipping
    was needed.
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, False
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, True
