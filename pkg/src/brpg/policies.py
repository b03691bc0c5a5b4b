"""Tabular softmax policies on a Euclidean ball of logits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BOUND_W = 50.0


@dataclass(frozen=True)
class PolicyParams:
    """Logits ``alpha[s, a]`` constrained to ``||alpha||_2 <= bound_w``."""

    alpha: np.ndarray
    bound_w: float = DEFAULT_BOUND_W

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        if self.bound_w <= 0:
            raise ValueError("bound_w must be positive")

    @classmethod
    def uniform(cls, n_states: int, n_actions: int, bound_w: float = DEFAULT_BOUND_W):
        return cls(np.zeros((n_states, n_actions)), bound_w)

    def replace(self, alpha: np.ndarray) -> "PolicyParams":
        return PolicyParams(alpha, self.bound_w)


def _logits(params) -> np.ndarray:
    return params.alpha if isinstance(params, PolicyParams) else np.asarray(params, dtype=float)


def to_table(params) -> np.ndarray:
    """Row-wise softmax of the logits (accepts ``PolicyParams`` or a raw array)."""
    alpha = _logits(params)
    if not np.all(np.isfinite(alpha)):
        raise ValueError("policy logits must be finite")
    shifted = alpha - alpha.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_policy_grad(params, s: int, a: int) -> np.ndarray:
    """Gradient of ``log pi(a|s)`` with respect to every logit.

    Only row ``s`` is non-zero: ``1{a'=a} - pi(a'|s)``.
    """
    alpha = _logits(params)
    pi = to_table(alpha)
    out = np.zeros_like(alpha)
    out[s] = -pi[s]
    out[s, a] += 1.0
    return out


def log_policy_grad_all(params) -> np.ndarray:
    """All score matrices stacked as ``out[s, a] = grad log pi(a|s)``."""
    alpha = _logits(params)
    S, A = alpha.shape
    return np.stack([np.stack([log_policy_grad(alpha, s, a) for a in range(A)]) for s in range(S)])


def project_ball(alpha: np.ndarray, bound: float) -> np.ndarray:
    norm = np.linalg.norm(alpha)
    # the slack keeps the projection idempotent under rounding of the rescale
    if norm <= bound * (1.0 + 1e-12):
        return alpha
    return alpha * (bound / norm)


def project_w(params: PolicyParams) -> PolicyParams:
    """Euclidean projection of the logits onto the ball of radius ``bound_w``."""
    return params.replace(project_ball(params.alpha, params.bound_w))
