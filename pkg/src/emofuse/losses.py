"""Softmax, negative log-likelihood and the Jeffreys-divergence loss.

For a posterior ``p`` over ``K`` classes and target ``k`` the Jeffreys loss is

    -log p_k - alpha * sum_{i!=k} log p_i / (K-1)
             + beta  * sum_{i!=k} p_i log p_i / (1 - p_k)

Probabilities are floored at ``epsilon`` inside the logarithms and
``1 - p_k`` is floored at ``epsilon`` in the denominator. All functions
accept a single vector or a batch with classes on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmofuseError


class NonFiniteInput(EmofuseError, ValueError):
    pass


@dataclass(frozen=True)
class JeffreysParams:
    alpha: float = 0.1
    beta: float = 0.05
    epsilon: float = 1e-12

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if not 0 < self.epsilon <= 1e-6:
            raise ValueError(f"epsilon must be in (0, 1e-6], got {self.epsilon}")


def _logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("logits contain NaN or Inf")
    return z


def log_softmax(logits) -> np.ndarray:
    z = _logits(logits)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = _logits(logits)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _target_mask(shape, target) -> np.ndarray:
    k = np.asarray(target)
    if np.any(k < 0) or np.any(k >= shape[-1]):
        raise IndexError(f"target {target} out of range for {shape[-1]} classes")
    return np.arange(shape[-1]) == k[..., None]


def nll_loss(probs, target, epsilon: float = 1e-12):
    p = np.asarray(probs, dtype=np.float64)
    mask = _target_mask(p.shape, target)
    pk = np.where(mask, p, 0.0).sum(axis=-1)
    return -np.log(np.maximum(pk, epsilon))


def jeffreys_loss(probs, target, params: JeffreysParams = JeffreysParams()):
    """Jeffreys loss of a posterior; the class count is ``probs.shape[-1]``."""
    p = np.asarray(probs, dtype=np.float64)
    K = p.shape[-1]
    eps = params.epsilon
    mask = _target_mask(p.shape, target)
    q = np.maximum(p, eps)
    logq = np.log(q)
    pk = np.where(mask, p, 0.0).sum(axis=-1)
    ce = -np.where(mask, logq, 0.0).sum(axis=-1)
    smooth = np.where(mask, 0.0, logq).sum(axis=-1) / (K - 1)
    entropy = np.where(mask, 0.0, q * logq).sum(axis=-1) / np.maximum(1.0 - pk, eps)
    return ce - params.alpha * smooth + params.beta * entropy


def _jeffreys_terms(logits, target, params: JeffreysParams):
    logp = log_softmax(logits)
    p = np.exp(logp)
    K = logp.shape[-1]
    mask = _target_mask(logp.shape, target)
    log_eps = np.log(params.epsilon)
    live = logp > log_eps
    logq = np.where(live, logp, log_eps)
    q = np.exp(logq)
    # 1 - p_k as the sum of the non-target mass avoids cancellation
    rest = np.where(mask, 0.0, p).sum(axis=-1)
    den = np.maximum(rest, params.epsilon)
    num = np.where(mask, 0.0, q * logq).sum(axis=-1)
    ce = -np.where(mask, logq, 0.0).sum(axis=-1)
    smooth = np.where(mask, 0.0, logq).sum(axis=-1) / (K - 1)
    loss = ce - params.alpha * smooth + params.beta * num / den
    return loss, logp, p, q, logq, live, mask, num, den, rest


def jeffreys_loss_from_logits(logits, target, params: JeffreysParams = JeffreysParams()):
    """Jeffreys loss evaluated from logits through log-sum-exp."""
    return _jeffreys_terms(logits, target, params)[0]


def jeffreys_grad_logits(logits, target, params: JeffreysParams = JeffreysParams()):
    """Gradient of the Jeffreys loss of ``softmax(logits)`` w.r.t. ``logits``.

    Active floors contribute zero gradient.
    """
    loss, logp, p, q, logq, live, mask, num, den, rest = _jeffreys_terms(logits, target, params)
    K = logp.shape[-1]
    # gradient w.r.t. log-probabilities first
    g = np.where(mask & live, -1.0, 0.0)
    g = g - params.alpha / (K - 1) * np.where(~mask & live, 1.0, 0.0)
    dnum = np.where(~mask & live, q * (logq + 1.0), 0.0)
    den_live = (rest > params.epsilon)[..., None]
    dden = np.where(~mask & den_live, p, 0.0)
    g = g + params.beta * (dnum / den[..., None] - (num / den**2)[..., None] * dden)
    # back through log-softmax
    return g - p * g.sum(axis=-1, keepdims=True)


def nll_loss_from_logits(logits, target):
    logp = log_softmax(logits)
    mask = _target_mask(logp.shape, target)
    return -np.where(mask, logp, 0.0).sum(axis=-1)


def nll_grad_logits(logits, target):
    z = _logits(logits)
    return softmax(z) - _target_mask(z.shape, target)


def loss_and_grad(logits, target, loss: str = "nll", params: JeffreysParams | None = None):
    """Per-sample loss values and logit gradients for the named loss."""
    if loss == "nll":
        return nll_loss_from_logits(logits, target), nll_grad_logits(logits, target)
    if loss == "jeffreys":
        params = params or JeffreysParams()
        return jeffreys_loss_from_logits(logits, target, params), jeffreys_grad_logits(logits, target, params)
    raise ValueError(f"unknown loss {loss!r}")
