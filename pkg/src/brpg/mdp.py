"""Finite MDPs: occupancy measures, Q-values and the linear value functional.

Arrays follow one layout throughout the package:

* transition kernels ``P[..., s, a, s']``
* policies, costs, occupancy measures and Q tables ``x[..., s, a]``

A leading batch axis (one entry per posterior sample) is allowed everywhere,
which is how the gradient engine evaluates many kernels at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policies import log_policy_grad_all, to_table

DENSE_LIMIT = 4096


class ConfigurationError(ValueError):
    """Shapes of model, kernel and policy do not agree."""


class InputError(ValueError):
    """Numerical input outside the domain of an operation."""


@dataclass(frozen=True)
class MdpModel:
    n_states: int
    n_actions: int
    gamma: float
    init_dist: np.ndarray
    expected_cost: np.ndarray = field(repr=False)

    def __post_init__(self):
        init = np.asarray(self.init_dist, dtype=float)
        cost = np.asarray(self.expected_cost, dtype=float)
        object.__setattr__(self, "init_dist", init)
        object.__setattr__(self, "expected_cost", cost)
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if init.shape != (self.n_states,):
            raise ConfigurationError("init_dist must have one entry per state")
        if np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
            raise ConfigurationError("init_dist must be a probability vector")
        if cost.shape[-2:] != (self.n_states, self.n_actions):
            raise ConfigurationError("expected_cost must be |S| x |A|")

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_states, self.n_actions


def check_transitions(P: np.ndarray, tol: float = 1e-12) -> None:
    """Raise if any row ``P[..., s, a, :]`` is not a probability vector."""
    P = np.asarray(P)
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=-1) - 1.0) > tol):
        raise InputError("transition rows must be probability vectors")


def _check_dims(model: MdpModel, P: np.ndarray, pi: np.ndarray) -> None:
    S, A = model.shape
    if P.shape[-3:] != (S, A, S):
        raise ConfigurationError(f"kernel shape {P.shape} incompatible with |S|={S}, |A|={A}")
    if pi.shape[-2:] != (S, A):
        raise ConfigurationError(f"policy shape {pi.shape} incompatible with |S|={S}, |A|={A}")


def state_transition(P: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)``."""
    return np.einsum("...sa,...sat->...st", pi, P)


def compute_occupancy(model: MdpModel, P: np.ndarray, pi: np.ndarray, K: int) -> np.ndarray:
    """Truncated discounted state-action occupancy measure.

    ``lambda(s,a) = sum_{t=0}^{K} gamma^t Pr(s_t=s, a_t=a)`` obtained by
    propagating the state distribution forward from ``init_dist``. The
    truncation error in l1 is at most ``gamma^(K+1) / (1 - gamma)``.
    """
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    _check_dims(model, P, pi)
    if K < 0:
        raise InputError("horizon K must be non-negative")
    P_pi = state_transition(P, pi)
    batch = np.broadcast_shapes(P_pi.shape[:-2], pi.shape[:-2])
    P_pi = np.broadcast_to(P_pi, batch + P_pi.shape[-2:])
    d = np.broadcast_to(model.init_dist, batch + (model.n_states,)).copy()
    lam_s = d.copy()
    disc = 1.0
    for _ in range(K):
        d = np.matmul(d[..., None, :], P_pi)[..., 0, :]
        disc *= model.gamma
        lam_s += disc * d
    return lam_s[..., :, None] * pi


def state_occupancy(lam: np.ndarray) -> np.ndarray:
    return lam.sum(axis=-1)


def occupancy_mass(gamma: float, K: int) -> float:
    """Total mass ``(1 - gamma^(K+1)) / (1 - gamma)`` of a truncated occupancy."""
    return (1.0 - gamma ** (K + 1)) / (1.0 - gamma)


def solve_q_values(model: MdpModel, P: np.ndarray, pi: np.ndarray, z: np.ndarray,
                   tol: float = 1e-9) -> np.ndarray:
    """Q table of policy ``pi`` for the per-step cost ``z`` (infinite horizon).

    Solves the policy-evaluation system on states,
    ``(I - gamma P_pi) V = z_pi``, then ``Q = z + gamma P V``. Small models use a
    dense solve; large ones fall back to value iteration until the Bellman
    residual drops below ``tol``.
    """
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    z = np.asarray(z, dtype=float)
    _check_dims(model, P, pi)
    if not np.all(np.isfinite(z)):
        raise InputError("cost vector z must be finite")
    S, A = model.shape
    g = model.gamma
    P_pi = state_transition(P, pi)
    z_pi = np.sum(pi * z, axis=-1)
    if S * A <= DENSE_LIMIT:
        M = np.eye(S) - g * P_pi
        batch = np.broadcast_shapes(z_pi.shape[:-1], M.shape[:-2])
        M = np.broadcast_to(M, batch + (S, S))
        rhs = np.broadcast_to(z_pi, batch + (S,))[..., None]
        V = np.linalg.solve(M, rhs)[..., 0]
        return z + g * np.einsum("...sat,...t->...sa", P, V)
    Q = np.array(z, copy=True)
    while True:
        V = np.sum(pi * Q, axis=-1)
        Q_new = z + g * np.einsum("...sat,...t->...sa", P, V)
        if np.max(np.abs(Q_new - Q)) <= tol * (1.0 - g):
            return Q_new
        Q = Q_new


def bellman_residual(model: MdpModel, P: np.ndarray, pi: np.ndarray, z: np.ndarray,
                     Q: np.ndarray) -> float:
    V = np.sum(pi * Q, axis=-1)
    rhs = z + model.gamma * np.einsum("...sat,...t->...sa", P, V)
    return float(np.max(np.abs(Q - rhs)))


def value_functional(model: MdpModel, P: np.ndarray, alpha: np.ndarray, z: np.ndarray,
                     K: int) -> np.ndarray:
    """``V(alpha; z) = <z, lambda(alpha)>`` with the occupancy truncated at ``K``."""
    lam = compute_occupancy(model, P, to_table(alpha), K)
    return np.sum(z * lam, axis=(-2, -1))


def grad_v(model: MdpModel, P: np.ndarray, alpha: np.ndarray, z: np.ndarray, K: int,
           lam: np.ndarray | None = None) -> np.ndarray:
    """Policy gradient of the linear functional ``V(alpha; z)``.

    ``sum_{s,a} Q(s,a) grad log pi(a|s) lambda(s,a)``, returned with the shape of
    ``alpha``. ``lam`` may be passed in when the caller already has it.
    """
    alpha = np.asarray(alpha, dtype=float)
    pi = to_table(alpha)
    if lam is None:
        lam = compute_occupancy(model, P, pi, K)
    Q = solve_q_values(model, P, pi, z)
    return contract_score(lam * Q, pi)


def contract_score(weights: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """``sum_{s,a} w(s,a) grad log pi(a|s)`` for a softmax table ``pi``.

    For softmax logits the score of ``(s,a)`` in row ``s`` is
    ``e_a - pi(.|s)``, so the contraction collapses to
    ``w(s,b) - pi(b|s) sum_a w(s,a)``.
    """
    return weights - pi * weights.sum(axis=-1, keepdims=True)


def grad_v_reference(model: MdpModel, P: np.ndarray, alpha: np.ndarray, z: np.ndarray,
                     K: int) -> np.ndarray:
    """Unbatched ``grad_v`` written as the literal double sum over score vectors."""
    pi = to_table(alpha)
    lam = compute_occupancy(model, P, pi, K)
    Q = solve_q_values(model, P, pi, z)
    scores = log_policy_grad_all(alpha)
    return np.einsum("sa,sa,saij->ij", Q, lam, scores)


def value_iteration(model: MdpModel, P: np.ndarray, tol: float = 1e-9,
                    max_iters: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal (cost-minimising) state values and a greedy deterministic policy.

    Stops when successive iterates differ by at most ``tol`` in max-norm.
    """
    c = model.expected_cost
    V = np.zeros(model.n_states)
    for _ in range(max_iters):
        Q = c + model.gamma * P @ V
        V_new = Q.min(axis=1)
        if np.max(np.abs(V_new - V)) <= tol:
            V = V_new
            break
        V = V_new
    else:
        raise RuntimeError("value iteration did not converge")
    Q = c + model.gamma * P @ V
    greedy = np.zeros_like(c)
    greedy[np.arange(model.n_states), Q.argmin(axis=1)] = 1.0
    return V, greedy


class MixtureFamily:
    """Small parametric family ``P(theta) = mean_j [(1 - theta_j) low_j + theta_j high_j]``.

    Each parameter interpolates between two fixed kernels; costs do not depend
    on ``theta``. Used for synthetic instances where the lake is too big.
    """

    def __init__(self, model: MdpModel, low: np.ndarray, high: np.ndarray,
                 param_names: tuple[str, ...] | None = None):
        self.base = model
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        check_transitions(self.low)
        check_transitions(self.high)
        p = self.low.shape[0]
        self.param_names = param_names or tuple(f"theta{j}" for j in range(p))
        self.n_states, self.n_actions = model.shape
        self.gamma = model.gamma

    def kernels(self, thetas: np.ndarray) -> np.ndarray:
        th = np.asarray(thetas, dtype=float)[..., :, None, None, None]
        return ((1.0 - th) * self.low + th * self.high).mean(axis=-4)

    def instantiate(self, thetas: np.ndarray) -> tuple[MdpModel, np.ndarray]:
        return self.base, self.kernels(thetas)


def random_model(rng, n_states: int = 3, n_actions: int = 2, gamma: float = 0.9,
                 n_params: int = 2) -> MixtureFamily:
    """Random dense ``MixtureFamily`` with costs in [0, 1] and a random start distribution."""
    rng = np.random.default_rng(rng)
    S, A = n_states, n_actions
    init = rng.dirichlet(np.ones(S))
    model = MdpModel(S, A, gamma, init, rng.random((S, A)))
    low = rng.dirichlet(np.ones(S), size=(n_params, S, A))
    high = rng.dirichlet(np.ones(S), size=(n_params, S, A))
    return MixtureFamily(model, low, high)
