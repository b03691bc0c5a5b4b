"""Coherent risk measures over posterior samples, in envelope (dual) form.

A risk value is ``rho(Z) = max_{xi in U} mean(xi * Z)`` for an envelope ``U`` of
density weights with ``xi >= 0`` and ``mean(xi) = 1``. Three kinds are
available:

* ``expectation``: ``U = {1}``.
* ``cvar``: ``U = {0 <= xi <= 1/(1-beta)}``.
* ``mean_semideviation``: ``xi = 1 + eta - mean(eta)`` with ``eta >= 0`` and
  ``||eta||_q <= c``; its primal form is ``E[Z] + c E[(Z - E[Z])_+^p]^(1/p)``.

``rho_value`` and ``cvar_weights`` are the closed forms used in training;
``saa_envelope_solve`` solves the sample-average max-min problem numerically
and serves as an independent cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RISK_KINDS = ("expectation", "cvar", "mean_semideviation")
CVAR_RULES = ("envelope", "indicator")


@dataclass(frozen=True)
class RiskMeasure:
    kind: str = "expectation"
    beta: float = 0.0
    c_msd: float = 0.0
    p_order: float = 2.0
    bq_bound: float | None = None
    cvar_rule: str = "envelope"

    def __post_init__(self):
        if self.kind not in RISK_KINDS:
            raise ValueError(f"unknown risk kind {self.kind!r}")
        if self.kind == "cvar" and not 0.0 <= self.beta < 1.0:
            raise ValueError("cvar level beta must lie in [0, 1)")
        if self.kind == "mean_semideviation":
            if not 0.0 <= self.c_msd <= 1.0:
                raise ValueError("semideviation weight must lie in [0, 1]")
            if self.p_order < 1.0:
                raise ValueError("semideviation order must be >= 1")
        if self.cvar_rule not in CVAR_RULES:
            raise ValueError(f"unknown cvar rule {self.cvar_rule!r}")

    @classmethod
    def cvar(cls, beta: float, rule: str = "envelope") -> "RiskMeasure":
        return cls("cvar", beta=beta, cvar_rule=rule)

    @classmethod
    def semideviation(cls, c: float, p: float = 2.0) -> "RiskMeasure":
        return cls("mean_semideviation", c_msd=c, p_order=p)

    @property
    def bound(self) -> float:
        """``B_q``: bound on the q-moment of the envelope weights."""
        if self.bq_bound is not None:
            return self.bq_bound
        if self.kind == "cvar":
            return 1.0 / (1.0 - self.beta)
        if self.kind == "mean_semideviation":
            return 1.0 + self.c_msd
        return 1.0


@dataclass
class EnvelopeSolution:
    xi: np.ndarray
    rho_value: float
    dual_multipliers: dict = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0
    var: float | None = None


def _as_values(values) -> np.ndarray:
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one sample value")
    return x


def var_index(r: int, beta: float) -> int:
    """1-based rank ``ceil(r * beta)`` of the VaR order statistic (at least 1)."""
    # round first so that e.g. 30 * 0.9 does not ceil to 28
    return max(1, math.ceil(round(r * beta, 9)))


def value_at_risk(values, beta: float) -> float:
    """``ceil(r beta)``-th smallest sample."""
    x = _as_values(values)
    return float(np.sort(x)[var_index(x.size, beta) - 1])


def cvar_weights(values, beta: float, rule: str = "envelope") -> EnvelopeSolution:
    """Closed-form CVaR weights on a sample.

    ``rule="envelope"`` returns the maximiser of ``mean(xi * values)`` over the
    CVaR envelope: weight ``1/(1-beta)`` on the samples above the VaR order
    statistic, the leftover mass on the VaR sample itself, zero below. Tied
    samples share their group's mass evenly. ``mean(xi) == 1`` and ``rho`` is the
    sample CVaR.

    ``rule="indicator"`` returns ``1/(1-beta) * 1{value >= VaR}``, the plain
    indicator estimator; its weights need not average to one.
    """
    x = _as_values(values)
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    r = x.size
    cap = 1.0 / (1.0 - beta)
    v = value_at_risk(x, beta)
    if rule == "indicator":
        xi = np.where(x >= v, cap, 0.0)
    elif rule == "envelope":
        order = np.argsort(-x, kind="stable")
        xi = np.zeros(r)
        left = float(r)
        for k in order:
            w = min(cap, left)
            xi[k] = w
            left -= w
            if left <= 0.0:
                break
        for val in np.unique(x):
            tied = x == val
            if tied.sum() > 1:
                xi[tied] = xi[tied].mean()
    else:
        raise ValueError(f"unknown cvar rule {rule!r}")
    return EnvelopeSolution(xi=xi, rho_value=float(np.mean(xi * x)), var=v)


def semideviation(values, c: float, p: float = 2.0) -> float:
    x = _as_values(values)
    m = x.mean()
    dev = np.maximum(x - m, 0.0)
    return float(m + c * np.mean(dev ** p) ** (1.0 / p))


def rho_value(measure: RiskMeasure, values) -> float:
    """Risk of a sample via the closed form of ``measure``."""
    x = _as_values(values)
    if measure.kind == "expectation":
        return float(x.mean())
    if measure.kind == "cvar":
        return cvar_weights(x, measure.beta, "envelope").rho_value
    return semideviation(x, measure.c_msd, measure.p_order)


def risk_weights(measure: RiskMeasure, values) -> EnvelopeSolution:
    """Closed-form maximising envelope weights ``xi*`` for ``values``."""
    x = _as_values(values)
    if measure.kind == "expectation":
        return EnvelopeSolution(np.ones_like(x), float(x.mean()))
    if measure.kind == "cvar":
        return cvar_weights(x, measure.beta, measure.cvar_rule)
    # Hoelder's equality case of max mean(eta (x - mean x)) over ||eta||_q <= c
    p, c = measure.p_order, measure.c_msd
    dev = np.maximum(x - x.mean(), 0.0)
    norm = np.mean(dev ** p) ** (1.0 / p)
    if norm == 0.0 or c == 0.0:
        eta = np.zeros_like(x)
    elif p == 1.0:
        eta = np.where(dev > 0, c, 0.0)
    else:
        eta = c * (dev / norm) ** (p - 1.0)
    xi = 1.0 + eta - eta.mean()
    return EnvelopeSolution(xi, float(np.mean(xi * x)))


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iters: int = 20000
    primal_weight: float = 3.0


def _proj_orthant_ball(v: np.ndarray, radius: float) -> np.ndarray:
    v = np.maximum(v, 0.0)
    n = np.linalg.norm(v)
    return v if n <= radius else v * (radius / n)


def _saa_problem(x: np.ndarray, measure: RiskMeasure):
    """Objective, constraint matrix and projection for the SAA envelope problem.

    Decision vector is ``xi`` (cvar) or ``(xi, eta)`` (semideviation); the
    affine constraints ``A v = b`` are dualised, everything else is projected.
    """
    r = x.size
    if measure.kind == "cvar":
        cap = measure.bound
        A = np.ones((1, r))
        b = np.array([float(r)])
        names = ["mean"]

        def proj(v):
            return np.clip(v, 0.0, cap)

        return x.copy(), A, b, proj, names
    p, c = measure.p_order, measure.c_msd
    if p not in (1.0, 2.0):
        raise NotImplementedError("SAA semideviation solver supports p in {1, 2}")
    # xi - eta + mean(eta) = 1 row-wise; its average gives mean(xi) = 1
    A = np.hstack([np.eye(r), -np.eye(r) + np.full((r, r), 1.0 / r)])
    b = np.ones(r)
    names = [f"eq{k}" for k in range(r)]
    xi_radius = measure.bound * math.sqrt(r)

    def proj(v):
        xi, eta = v[:r], v[r:]
        xi = _proj_orthant_ball(xi, xi_radius)
        if p == 2.0:
            eta = _proj_orthant_ball(eta, c * math.sqrt(r))
        else:
            eta = np.clip(eta, 0.0, c)
        return np.concatenate([xi, eta])

    return np.concatenate([x, np.zeros(r)]), A, b, proj, names


def saa_envelope_solve(values, measure: RiskMeasure,
                       solver_cfg: SolverConfig | None = None) -> EnvelopeSolution:
    """Saddle point of the sample-average Lagrangian over the risk envelope.

    Runs primal-dual hybrid gradient: a projected ascent step on the weights,
    then a descent step on the multipliers of the affine envelope constraints
    evaluated at the extrapolated weights. Values are centred and scaled first
    (the maximiser is invariant to that), and iteration stops once the primal
    infeasibility and the fixed-point residual are both below ``tol``.
    """
    cfg = solver_cfg or SolverConfig()
    x = _as_values(values)
    r = x.size
    if measure.kind == "expectation":
        return EnvelopeSolution(np.ones(r), float(x.mean()))
    spread = float(np.max(np.abs(x - x.mean())))
    xs = (x - x.mean()) / spread if spread > 0 else np.zeros_like(x)
    c, A, b, proj, names = _saa_problem(xs, measure)
    norm_A = np.linalg.norm(A, 2)
    tau = 0.9 * cfg.primal_weight / norm_A
    sigma = 0.9 / (cfg.primal_weight * norm_A)
    v = proj(np.concatenate([np.ones(r), np.zeros(c.size - r)]))
    mu = np.zeros(b.size)
    best = (np.inf, v, mu)
    it = 0
    res = np.inf
    for it in range(1, cfg.max_iters + 1):
        v_new = proj(v + tau * (c - A.T @ mu))
        mu_new = mu + sigma * (A @ (2.0 * v_new - v) - b)
        infeas = np.max(np.abs(A @ v_new - b)) / r
        motion = max(np.max(np.abs(v_new - v)) / tau, np.max(np.abs(mu_new - mu)) / sigma)
        res = max(infeas, motion)
        v, mu = v_new, mu_new
        if res < best[0]:
            best = (res, v, mu)
        if res <= cfg.tol:
            break
    converged = res <= cfg.tol
    if not converged:
        res, v, mu = best
    xi = v[:r]
    duals = dict(zip(names, mu * (spread / r if spread > 0 else 1.0 / r)))
    return EnvelopeSolution(xi=xi, rho_value=float(np.mean(xi * x)), dual_multipliers=duals,
                            converged=converged, iterations=it, residual=float(res))
