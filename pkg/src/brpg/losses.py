"""Convex losses of the occupancy measure, their gradients and conjugates.

Three families are supported:

``linear``
    ``F(lam) = <lam, c>``, the discounted total cost.
``cmdp``
    ``F(lam) = <lam, c> + mult * (<lam, d> - budget)``, a Lagrangian relaxation of
    a constrained MDP with the multiplier held fixed.
``kl``
    ``F(lam) = sum_s p_s log(p_s / J_s)`` with ``p_s = (1 - gamma) sum_a lam(s,a)``,
    the divergence between the normalised state occupancy and a target ``J``.

``cost_vec`` may be left as ``None`` for the linear and cmdp kinds; the cost of
the environment instance is then passed at evaluation time, which lets a cost
table depend on the kernel parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

KINDS = ("linear", "kl_imitation", "cmdp_lagrangian")
_ALIASES = {"kl": "kl_imitation", "cmdp": "cmdp_lagrangian"}
_TINY = 1e-300


class LossDomainError(ValueError):
    """Occupancy puts mass on a state where the KL target is zero."""


class ContractError(RuntimeError):
    """Operation requested for a loss kind that does not support it."""


@dataclass(frozen=True)
class LossSpec:
    kind: str
    cost_vec: np.ndarray | None = None
    penalty_vec: np.ndarray | None = None
    multiplier: float = 0.0
    budget: float = 0.0
    target_state_dist: np.ndarray | None = None
    gamma: float = 0.99
    j_floor: float | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        for name in ("cost_vec", "penalty_vec"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        if kind == "cmdp_lagrangian":
            if self.penalty_vec is None:
                raise ValueError("cmdp loss needs a penalty vector")
            if self.multiplier < 0:
                raise ValueError("Lagrange multiplier must be non-negative")
        if kind == "kl_imitation":
            if self.target_state_dist is None:
                raise ValueError("kl loss needs a target state distribution")
            J = np.asarray(self.target_state_dist, dtype=float)
            if np.any(J < 0) or abs(J.sum() - 1.0) > 1e-9:
                raise ValueError("target_state_dist must be a probability vector")
            if self.j_floor is not None:
                J = np.maximum(J, self.j_floor)
                J = J / J.sum()
            object.__setattr__(self, "target_state_dist", J)

    @property
    def use_direct_gradient(self) -> bool:
        """True when the conjugate is an indicator and only the chain rule applies."""
        return self.kind != "kl_imitation"

    def with_costs(self, costs: np.ndarray) -> "LossSpec":
        return replace(self, cost_vec=np.asarray(costs, dtype=float))


def _costs(spec: LossSpec, costs):
    c = spec.cost_vec if costs is None else np.asarray(costs, dtype=float)
    if c is None:
        raise ValueError(f"{spec.kind} loss needs a cost table")
    return c


def _kl_parts(spec: LossSpec, lam: np.ndarray):
    J = spec.target_state_dist
    p = (1.0 - spec.gamma) * np.asarray(lam, dtype=float).sum(axis=-1)
    if np.any((p > 0) & (J == 0)):
        raise LossDomainError("occupancy charges a state with zero target mass")
    return p, J


def eval_loss(spec: LossSpec, lam: np.ndarray, costs: np.ndarray | None = None) -> np.ndarray:
    """``F(lam)``; ``lam`` may carry leading batch axes."""
    lam = np.asarray(lam, dtype=float)
    if spec.kind == "kl_imitation":
        p, J = _kl_parts(spec, lam)
        safe = np.where(p > 0, p, 1.0)
        return np.sum(np.where(p > 0, p * np.log(safe / np.where(J > 0, J, 1.0)), 0.0), axis=-1)
    c = _costs(spec, costs)
    value = np.sum(lam * c, axis=(-2, -1))
    if spec.kind == "cmdp_lagrangian":
        value = value + spec.multiplier * (np.sum(lam * spec.penalty_vec, axis=(-2, -1)) - spec.budget)
    return value


def grad_loss(spec: LossSpec, lam: np.ndarray, costs: np.ndarray | None = None) -> np.ndarray:
    """Analytic ``grad_lam F``, same shape as ``lam``.

    For the KL kind the derivative does not depend on the action; states with
    zero occupancy are evaluated at a tiny positive mass so the result stays
    finite.
    """
    lam = np.asarray(lam, dtype=float)
    if spec.kind == "kl_imitation":
        p, J = _kl_parts(spec, lam)
        g = (1.0 - spec.gamma) * (np.log(np.maximum(p, _TINY) / np.where(J > 0, J, 1.0)) + 1.0)
        return np.broadcast_to(g[..., None], lam.shape).copy()
    c = _costs(spec, costs)
    g = np.broadcast_to(c, np.broadcast_shapes(c.shape, lam.shape)).copy()
    if spec.kind == "cmdp_lagrangian":
        g = g + spec.multiplier * spec.penalty_vec
    return g


def _require_conjugate(spec: LossSpec):
    if spec.use_direct_gradient:
        raise ContractError(
            f"{spec.kind} loss has an indicator conjugate; use the direct gradient method")


def conjugate(spec: LossSpec, z: np.ndarray) -> np.ndarray:
    """Fenchel conjugate ``F*(z) = sup_{lam >= 0} <lam, z> - F(lam)`` (KL kind).

    Since ``F`` sees only state marginals, the supremum puts each state's mass
    on its best action, giving ``sum_s J_s exp(max_a z(s,a) / (1 - gamma) - 1)``.
    """
    _require_conjugate(spec)
    scale = 1.0 - spec.gamma
    M = np.asarray(z, dtype=float).max(axis=-1)
    return np.sum(spec.target_state_dist * np.exp(M / scale - 1.0), axis=-1)


def state_conjugate_grad(spec: LossSpec, y: np.ndarray) -> np.ndarray:
    """State masses ``m_s`` maximising the conjugate for per-state duals ``y``."""
    _require_conjugate(spec)
    scale = 1.0 - spec.gamma
    return spec.target_state_dist / scale * np.exp(np.asarray(y, dtype=float) / scale - 1.0)


def conjugate_grad(spec: LossSpec, z: np.ndarray, tie_tol: float = 1e-12) -> np.ndarray:
    """A gradient of ``F*`` at ``z``.

    The conjugate is differentiable in the state masses only; within a state the
    mass may sit on any maximising action. This returns the element that splits
    it evenly across the maximisers, so its state marginals are the unique part.
    """
    _require_conjugate(spec)
    z = np.asarray(z, dtype=float)
    M = z.max(axis=-1, keepdims=True)
    top = z >= M - tie_tol * np.maximum(1.0, np.abs(M))
    m = state_conjugate_grad(spec, M[..., 0])
    return top * (m[..., None] / top.sum(axis=-1, keepdims=True))
