"""Mean and attention pooling of T x D feature sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionMismatch, FeatureSequence

POOLING_KINDS = ("mean", "attention")


@dataclass(frozen=True, eq=False)
class AttentionParams:
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        if u.ndim != 1 or not np.all(np.isfinite(u)):
            raise ValueError("attention scoring vector must be a finite 1-D array")
        object.__setattr__(self, "u", u)


def _frames(seq) -> np.ndarray:
    if isinstance(seq, FeatureSequence):
        return seq.frames
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionMismatch(f"expected a T x D matrix with T >= 1, got shape {x.shape}")
    return x


def _u(params) -> np.ndarray:
    return params.u if isinstance(params, AttentionParams) else np.asarray(params, dtype=np.float64)


def mean_pool(seq) -> np.ndarray:
    return _frames(seq).mean(axis=0)


def attention_weights(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    if u.shape != (x.shape[1],):
        raise DimensionMismatch(f"scoring vector has shape {u.shape}, frames have D={x.shape[1]}")
    s = x @ u
    e = np.exp(s - s.max())
    return e / e.sum()


def attention_pool(seq, params) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-weighted frame average; returns ``(pooled, weights)``.

    With a zero scoring vector this is exactly mean pooling.
    """
    x = _frames(seq)
    u = _u(params)
    if not np.any(u):
        if u.shape != (x.shape[1],):
            raise DimensionMismatch(f"scoring vector has shape {u.shape}, frames have D={x.shape[1]}")
        return x.mean(axis=0), np.full(x.shape[0], 1.0 / x.shape[0])
    w = attention_weights(x, u)
    return w @ x, w


def attention_pool_backward(seq, params, upstream_grad) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``upstream_grad . pooled`` w.r.t. the frames and ``u``."""
    x = _frames(seq)
    u = _u(params)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != (x.shape[1],):
        raise DimensionMismatch(f"upstream gradient has shape {g.shape}, expected ({x.shape[1]},)")
    pooled, w = attention_pool(x, u)
    gx = x @ g
    # d(loss)/d(score_t) through the softmax
    gs = w * (gx - g @ pooled)
    grad_seq = np.outer(w, g) + np.outer(gs, u)
    grad_u = gs @ x
    return grad_seq, grad_u
