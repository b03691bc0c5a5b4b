"""Estimators of grad_alpha C(alpha, theta) and the Bayesian-risk policy gradient.

``C(alpha, theta) = F(lambda(alpha, theta))`` is the loss of the softmax policy
with logits ``alpha`` in the MDP with kernel parameter ``theta``. Three ways of
differentiating it are provided:

* ``grad_c_direct``: chain rule, ``grad V(alpha; z)`` at ``z = grad F(lambda)``.
* ``grad_c_variational``: the alternating primal-dual iteration over the
  conjugate of ``F`` (KL loss only).
* ``grad_c_zeroth_order``: Gaussian smoothing from loss evaluations only.

``assemble_gradient`` combines per-sample gradients with the risk envelope
weights ``xi*`` of the sampled losses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import losses
from .bayes import Posterior, sample_theta
from .losses import LossSpec, eval_loss, grad_loss, state_conjugate_grad
from .mdp import MdpModel, compute_occupancy, contract_score, solve_q_values
from .policies import to_table
from .risk import RiskMeasure, SolverConfig, risk_weights, rho_value, saa_envelope_solve

METHODS = ("direct", "variational", "zeroth_order")


class ParametricMdp(Protocol):
    """An MDP family indexed by kernel parameters ``theta``."""

    param_names: tuple[str, ...]
    n_states: int
    n_actions: int
    gamma: float

    def instantiate(self, thetas: np.ndarray) -> tuple[MdpModel, np.ndarray]:
        """Model (costs batched like ``thetas[..., 0]``) and kernels ``(..., S, A, S)``."""
        ...


@dataclass(frozen=True)
class GradConfig:
    method: str = "direct"
    K: int = 130
    r: int = 30
    var_iters: int = 2000
    nu: float = 1e-3
    m: int = 100
    envelope: str = "closed_form"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown gradient method {self.method!r}")
        if self.envelope not in ("closed_form", "saa"):
            raise ValueError("envelope must be 'closed_form' or 'saa'")
        if self.nu <= 0 or self.m < 1 or self.r < 1 or self.K < 0 or self.var_iters < 1:
            raise ValueError("need nu > 0, m >= 1, r >= 1, K >= 0, var_iters >= 1")


@dataclass
class GradientEstimate:
    g_hat: np.ndarray
    objective: float
    values: np.ndarray
    xi: np.ndarray
    per_sample_norms: np.ndarray
    thetas: np.ndarray
    envelope_converged: bool = True

    @property
    def degraded(self) -> bool:
        return not self.envelope_converged


def loss_value(model: MdpModel, P: np.ndarray, alpha: np.ndarray, spec: LossSpec,
               K: int) -> np.ndarray:
    """``C(alpha, theta)`` with the occupancy truncated at ``K``."""
    lam = compute_occupancy(model, P, to_table(alpha), K)
    return eval_loss(spec, lam, _costs(spec, model))


def _costs(spec: LossSpec, model: MdpModel):
    return model.expected_cost if spec.cost_vec is None else None


def grad_c_direct(model: MdpModel, P: np.ndarray, alpha: np.ndarray, spec: LossSpec,
                  K: int) -> np.ndarray:
    """Chain-rule gradient ``grad V(alpha; z)`` with ``z = grad F(lambda(alpha))``.

    Batched over leading axes of ``P`` / the model costs.
    """
    pi = to_table(alpha)
    lam = compute_occupancy(model, P, pi, K)
    z = grad_loss(spec, lam, _costs(spec, model))
    Q = solve_q_values(model, P, pi, z)
    return contract_score(lam * Q, pi)


def _value_grad_basis(model: MdpModel, P: np.ndarray, pi: np.ndarray, lam: np.ndarray):
    """Matrix ``B`` with ``grad V(alpha; z) = B @ y`` when ``z(s,a) = y_s``."""
    S, A = model.shape
    z = np.repeat(np.eye(S)[:, :, None], A, axis=2)
    Q = solve_q_values(model, P, pi, z)
    cols = contract_score(lam * Q, pi)
    return cols.reshape(S, S * A).T


def grad_c_variational(model: MdpModel, P: np.ndarray, alpha: np.ndarray, spec: LossSpec,
                       K: int, iters: int = 2000, z0: np.ndarray | None = None,
                       x0: np.ndarray | None = None, history: list | None = None) -> np.ndarray:
    """Gradient of ``C`` from the alternating iteration over ``F*`` (KL loss).

    Iterates ``z <- z + a_t [lambda - grad F*(z)]`` and
    ``x <- x - b_t [grad V(alpha; z) + x]`` with ``a_t = b_t = 1/sqrt(t+1)`` and
    returns ``-x``. The KL loss only sees state marginals, so the dual ``z`` is
    kept constant across actions and updated through its per-state value ``y``;
    the ``z`` step is scaled per state by ``(1-gamma) / max(lambda_s, m_s)``
    (``m = grad F*`` marginal), which keeps the exponential conjugate stable.
    ``history``, when given, receives the dual residual of each step.
    """
    if spec.use_direct_gradient:
        raise losses.ContractError(
            f"{spec.kind} loss has no usable conjugate; call grad_c_direct instead")
    alpha = np.asarray(alpha, dtype=float)
    pi = to_table(alpha)
    lam = compute_occupancy(model, P, pi, K)
    lam_s = lam.sum(axis=-1)
    basis = _value_grad_basis(model, P, pi, lam)
    scale = 1.0 - spec.gamma
    y = np.zeros(model.n_states) if z0 is None else np.asarray(z0, dtype=float).max(axis=-1)
    x = np.zeros(alpha.size) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    for t in range(iters):
        step = 1.0 / np.sqrt(t + 1.0)
        m = state_conjugate_grad(spec, y)
        resid = lam_s - m
        if history is not None:
            history.append(float(np.max(np.abs(resid))))
        denom = np.maximum(np.maximum(lam_s, m), 1e-300)
        y = y + step * scale * resid / denom
        x = x - step * (basis @ y + x)
    return -x.reshape(alpha.shape)


def gaussian_smoothing_grad(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, nu: float,
                            m: int, rng, chunk: int = 2048) -> np.ndarray:
    """``mean_j (f(x + nu u_j) - f(x)) / nu * u_j`` with ``u_j ~ N(0, I)``.

    ``f`` receives a stack of points ``(n, *x.shape)`` and returns ``n`` values.
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=float)
    f0 = float(np.asarray(f(x[None]))[0])
    total = np.zeros_like(x)
    done = 0
    while done < m:
        n = min(chunk, m - done)
        u = rng.standard_normal((n,) + x.shape)
        diff = (np.asarray(f(x[None] + nu * u)) - f0) / nu
        total += np.tensordot(diff, u, axes=1)
        done += n
    return total / m


def grad_c_zeroth_order(model: MdpModel, P: np.ndarray, alpha: np.ndarray, spec: LossSpec,
                        K: int, nu: float = 1e-3, m: int = 100, rng=None) -> np.ndarray:
    """Gaussian-smoothing estimate of ``grad C`` for one kernel ``P``."""
    def f(a):
        return loss_value(model, P, a, spec, K)

    return gaussian_smoothing_grad(f, np.asarray(alpha, dtype=float), nu, m, rng)


def _select(model: MdpModel, P: np.ndarray, k: int) -> tuple[MdpModel, np.ndarray]:
    cost = model.expected_cost
    if cost.ndim == 3:
        cost = cost[k]
    return MdpModel(model.n_states, model.n_actions, model.gamma, model.init_dist, cost), P[k]


def per_sample_gradients(model: MdpModel, P: np.ndarray, alpha: np.ndarray, spec: LossSpec,
                         cfg: GradConfig, idx: np.ndarray, rng) -> np.ndarray:
    """``grad C(alpha, theta_k)`` for the batch entries ``idx`` (others left zero)."""
    grads = np.zeros((P.shape[0],) + np.shape(alpha))
    if idx.size == 0:
        return grads
    if cfg.method == "direct":
        cost = model.expected_cost
        sub = MdpModel(model.n_states, model.n_actions, model.gamma, model.init_dist,
                       cost[idx] if cost.ndim == 3 else cost)
        grads[idx] = grad_c_direct(sub, P[idx], alpha, spec, cfg.K)
        return grads
    seeds = np.random.default_rng(rng).integers(0, 2**63, size=P.shape[0])
    for k in idx:
        mk, Pk = _select(model, P, k)
        if cfg.method == "variational":
            grads[k] = grad_c_variational(mk, Pk, alpha, spec, cfg.K, cfg.var_iters)
        else:
            grads[k] = grad_c_zeroth_order(mk, Pk, alpha, spec, cfg.K, cfg.nu, cfg.m,
                                           np.random.default_rng(seeds[k]))
    return grads


def assemble_gradient(family: ParametricMdp, post: Posterior, alpha: np.ndarray,
                      spec: LossSpec, measure: RiskMeasure, cfg: GradConfig,
                      rng) -> GradientEstimate:
    """Risk-weighted policy gradient ``(1/r) sum_k xi*(theta_k) grad C(alpha, theta_k)``.

    Posterior draws come first from ``rng``; the remaining stream seeds the
    per-sample zeroth-order directions. Samples with zero envelope weight are
    not differentiated.
    """
    rng = np.random.default_rng(rng)
    alpha = np.asarray(alpha, dtype=float)
    thetas = sample_theta(post, cfg.r, rng)
    model, P = family.instantiate(thetas)
    lam = compute_occupancy(model, P, to_table(alpha), cfg.K)
    values = eval_loss(spec, lam, _costs(spec, model))
    if cfg.envelope == "saa" and measure.kind != "expectation":
        sol = saa_envelope_solve(values, measure, cfg.solver)
    else:
        sol = risk_weights(measure, values)
    idx = np.flatnonzero(sol.xi)
    grads = per_sample_gradients(model, P, alpha, spec, cfg, idx, rng)
    g_hat = np.tensordot(sol.xi, grads, axes=1) / cfg.r
    norms = np.full(cfg.r, np.nan)
    norms[idx] = np.linalg.norm(grads[idx].reshape(idx.size, -1), axis=1)
    return GradientEstimate(g_hat=g_hat, objective=rho_value(measure, values), values=values,
                            xi=sol.xi, per_sample_norms=norms, thetas=thetas,
                            envelope_converged=sol.converged)
