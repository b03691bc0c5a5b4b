"""Projected policy-gradient loops: batch BR-PG and its episodic extension."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .bayes import Posterior, TransitionDataset, posterior_update
from .gradients import GradConfig, ParametricMdp, assemble_gradient
from .losses import LossSpec
from .policies import DEFAULT_BOUND_W, PolicyParams, project_w, to_table
from .risk import RiskMeasure

OUTPUT_RULES = ("last_iterate", "uniform_random")


class TrainingError(RuntimeError):
    """An iteration failed; ``trace`` holds everything recorded before it."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class RunConfig:
    iters: int = 100
    step: float = 0.5
    grad: GradConfig = field(default_factory=GradConfig)
    output_rule: str = "last_iterate"
    seed: int = 0
    bound_w: float = DEFAULT_BOUND_W

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("need at least one iteration")
        if self.step < 0:
            raise ValueError("step must be non-negative")
        if self.output_rule not in OUTPUT_RULES:
            raise ValueError(f"unknown output rule {self.output_rule!r}")


@dataclass(frozen=True)
class EpisodeSchedule:
    iters_per_episode: tuple[int, ...]
    batch_size: int = 10

    def __post_init__(self):
        object.__setattr__(self, "iters_per_episode", tuple(int(t) for t in self.iters_per_episode))
        if any(t < 1 for t in self.iters_per_episode):
            raise ValueError("every episode needs at least one iteration")
        if self.batch_size < 0:
            raise ValueError("batch_size must be non-negative")

    @classmethod
    def constant(cls, n_episodes: int, iters: int, batch_size: int = 10) -> "EpisodeSchedule":
        return cls((iters,) * n_episodes, batch_size)

    @property
    def n_episodes(self) -> int:
        return len(self.iters_per_episode)


@dataclass
class TrainTrace:
    """Per-iteration objective estimates and gradient norms, plus posterior summaries."""

    iteration: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    episode: list[int] = field(default_factory=list)
    posteriors: list[dict] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)

    def record(self, objective: float, grad_norm: float, episode: int,
               alpha: np.ndarray | None = None) -> None:
        """Append iteration ``len(self)``; ``alpha`` is the iterate it was taken at."""
        if alpha is not None:
            self.snapshots.append(np.array(alpha))
        self.iteration.append(len(self.iteration))
        self.objective.append(float(objective))
        self.grad_norm.append(float(grad_norm))
        self.episode.append(int(episode))

    def __len__(self):
        return len(self.iteration)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "objective", "grad_norm", "episode"])
        for row in zip(self.iteration, self.objective, self.grad_norm, self.episode):
            w.writerow([row[0], repr(row[1]), repr(row[2]), row[3]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _pick_output(iterates: Sequence[np.ndarray], final: np.ndarray, rule: str, rng) -> np.ndarray:
    if rule == "last_iterate":
        return final
    return iterates[int(rng.integers(len(iterates)))]


def br_pg(family: ParametricMdp, posterior: Posterior, spec: LossSpec, measure: RiskMeasure,
          cfg: RunConfig, alpha0: np.ndarray | None = None, rng=None, episode: int = 0,
          trace: TrainTrace | None = None) -> tuple[PolicyParams, TrainTrace]:
    """Bayesian-risk projected policy gradient on a fixed posterior.

    Each iteration draws ``r`` kernel parameters, weights their loss gradients
    by the risk envelope, and takes ``alpha <- Proj_W(alpha - step * g_hat)``.
    The trace records ``G_hat(alpha_t)``, the risk of that iteration's sampled
    losses, before each step.
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    trace = TrainTrace() if trace is None else trace
    S, A = family.n_states, family.n_actions
    alpha = np.zeros((S, A)) if alpha0 is None else np.array(alpha0, dtype=float)
    params = project_w(PolicyParams(alpha, cfg.bound_w))
    iterates = []
    for t in range(cfg.iters):
        iterates.append(params.alpha)
        try:
            est = assemble_gradient(family, posterior, params.alpha, spec, measure, cfg.grad, rng)
        except Exception as exc:
            raise TrainingError(f"iteration {len(trace)} failed: {exc}", trace) from exc
        trace.record(est.objective, np.linalg.norm(est.g_hat), episode, params.alpha)
        params = project_w(params.replace(params.alpha - cfg.step * est.g_hat))
    out = _pick_output(iterates, params.alpha, cfg.output_rule, rng)
    trace.outputs.append(out)
    return params.replace(out), trace


def _summary(post: Posterior, episode: int) -> dict:
    return {"episode": episode,
            **{f"{n}_a": b.a for n, b in zip(post.names, post.beliefs)},
            **{f"{n}_b": b.b for n, b in zip(post.names, post.beliefs)},
            **{f"{n}_n": k for n, k in zip(post.names, post.n_observations)}}


def episodic_br_pg(family, prior: Posterior, true_theta: Sequence[float], spec: LossSpec,
                   measure: RiskMeasure, schedule: EpisodeSchedule, cfg: RunConfig,
                   initial_data: TransitionDataset | None = None,
                   ) -> tuple[PolicyParams, TrainTrace, Posterior]:
    """Alternate data collection in the true environment with BR-PG updates.

    ``family`` must provide ``simulate(theta, policy_table, n, rng)`` returning a
    ``TransitionDataset``. Episode ``i`` deploys the current policy for
    ``schedule.batch_size`` steps, updates the posterior, then runs
    ``iters_per_episode[i]`` iterations warm-started from the previous episode's
    output.
    """
    rng = np.random.default_rng(cfg.seed)
    post = prior if initial_data is None else posterior_update(prior, initial_data)
    trace = TrainTrace()
    alpha = np.zeros((family.n_states, family.n_actions))
    params = PolicyParams(alpha, cfg.bound_w)
    for i, t_i in enumerate(schedule.iters_per_episode):
        if schedule.batch_size > 0:
            data = family.simulate(np.asarray(true_theta, float), to_table(params.alpha),
                                   schedule.batch_size, rng)
            post = posterior_update(post, data)
        trace.posteriors.append(_summary(post, i))
        params, trace = br_pg(family, post, spec, measure, replace(cfg, iters=t_i),
                              alpha0=params.alpha, rng=rng, episode=i, trace=trace)
    return params, trace, post


def schedule_iters(epsilon: float, lipschitz_estimates: Sequence[float],
                   gap_estimates: Sequence[float], const: float = 1.0,
                   max_iters: int = 10**6) -> list[int]:
    """Per-episode iteration counts ``t_i ~ const * L_i * gap_i / epsilon^2``.

    ``gap_estimates[i]`` stands for the combined estimation gaps of episode ``i``
    (previous-episode gradient gap plus current objective gap). Results are
    rounded and clamped to ``[1, max_iters]``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if len(lipschitz_estimates) != len(gap_estimates):
        raise ValueError("need one Lipschitz and one gap estimate per episode")
    out = []
    for L, gap in zip(lipschitz_estimates, gap_estimates):
        t = const * L * gap / epsilon**2
        out.append(int(min(max(math.floor(t + 0.5), 1), max_iters)))
    return out
