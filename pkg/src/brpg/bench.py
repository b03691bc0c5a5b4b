"""Replicated Frozen Lake experiments: batch data, episodic and imitation modes.

Every replication draws its data from ``(seed, rep, N)`` and runs each method
with randomness from ``(seed, rep, N, method index)``, so any row can be
recomputed in isolation and the worker count never changes the output.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .bayes import Posterior, TransitionDataset, mle, posterior_update
from .frozen_lake import (PARAM_NAMES, FrozenLake, LakeMap, LakeParams, expert_state_dist,
                          generate_data)
from .gradients import GradConfig
from .losses import LossSpec, eval_loss
from .mdp import compute_occupancy, value_iteration
from .optimizer import EpisodeSchedule, RunConfig, TrainTrace, br_pg, episodic_br_pg
from .policies import PolicyParams, to_table
from .risk import RiskMeasure

log = logging.getLogger(__name__)

MODES = ("batch", "episodic", "imitate")
TABLE_COLUMNS = ("method", "N", "beta", "mean_loss", "stderr", "psv")
_DATA_STREAM = 0xDA7A
MAX_FAILURE_RATE = 0.10


@dataclass(frozen=True)
class MethodSpec:
    name: str = "br_pg"
    risk: str = "cvar"
    beta: float = 0.0
    c_msd: float = 0.0

    def __post_init__(self):
        if self.name not in ("br_pg", "empirical"):
            raise ValueError(f"unknown method {self.name!r}")

    @property
    def label(self) -> str:
        if self.name == "empirical":
            return "empirical"
        if self.risk == "mean_semideviation":
            return f"br_pg_msd{self.c_msd:g}"
        if self.risk == "expectation":
            return "br_pg_mean"
        return f"br_pg_b{self.beta:g}"

    def measure(self) -> RiskMeasure:
        if self.name == "empirical" or self.risk == "expectation":
            return RiskMeasure()
        if self.risk == "mean_semideviation":
            return RiskMeasure.semideviation(self.c_msd)
        return RiskMeasure.cvar(self.beta)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "batch"
    map_path: str | None = None
    theta_s: float = 0.3
    theta_e: float = 0.02
    gamma: float = 0.97
    K: int = 130
    N: tuple[int, ...] = (50,)
    split: float = 0.5
    seed: int = 0
    reps: int = 50
    methods: tuple[MethodSpec, ...] = (MethodSpec(),)
    loss: str = "linear"
    iters: int = 100
    step: float | None = None
    r: int = 30
    grad_method: str = "direct"
    output_rule: str = "last_iterate"
    episodes: int = 20
    batch_size: int = 10
    j_floor: float | None = 1e-12
    workers: int = 1
    out: str = "results"
    plots: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.loss not in ("linear", "kl"):
            raise ValueError("loss must be 'linear' or 'kl'")
        object.__setattr__(self, "N", tuple(int(n) for n in np.atleast_1d(self.N)))
        object.__setattr__(self, "methods", tuple(
            m if isinstance(m, MethodSpec) else MethodSpec(**m) for m in self.methods))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["N"] = list(self.N)
        d["methods"] = [asdict(m) for m in self.methods]
        return d

    @property
    def true_params(self) -> LakeParams:
        return LakeParams(self.theta_s, self.theta_e)

    def lake(self) -> LakeMap:
        return LakeMap.from_file(self.map_path) if self.map_path else LakeMap()

    def run_config(self, seed) -> RunConfig:
        step = self.step if self.step is not None else (1.0 if self.loss == "kl" else 0.5)
        grad = GradConfig(method=self.grad_method, K=self.K, r=self.r)
        return RunConfig(iters=self.iters, step=step, grad=grad,
                         output_rule=self.output_rule, seed=seed)


@dataclass
class ReplicationResult:
    method: str
    N: int
    beta: float
    rep: int
    loss: float
    wall_time: float
    curve: np.ndarray = field(repr=False)
    trace: TrainTrace = field(repr=False)
    alpha: np.ndarray = field(repr=False)


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    rows: list[ReplicationResult]
    oracle: float
    initial_loss: float
    failures: int = 0


def positive_sided_variance(losses) -> float:
    """``mean(max(0, x - mean(x))^2)``: dispersion of the worse-than-average outcomes."""
    x = np.asarray(losses, dtype=float)
    if x.size == 0:
        raise ValueError("need at least one loss")
    return float(np.mean(np.maximum(x - x.mean(), 0.0) ** 2))


def _seed(cfg: ExperimentConfig, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, *keys])


class Evaluator:
    """True-model loss ``C(alpha, theta*)`` for the configured task."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.env = FrozenLake(cfg.lake(), cfg.gamma)
        theta = cfg.true_params.as_array()
        self.model, self.P = self.env.instantiate(theta)
        _, self.expert = value_iteration(self.model, self.P)
        if cfg.loss == "kl":
            J = expert_state_dist(self.env.lake, cfg.true_params, self.expert, cfg.gamma, cfg.K,
                                  floor=cfg.j_floor)
            self.spec = LossSpec("kl", target_state_dist=J, gamma=cfg.gamma)
        else:
            self.spec = LossSpec("linear")

    def __call__(self, alphas) -> np.ndarray:
        pis = to_table(np.asarray(alphas, dtype=float))
        lam = compute_occupancy(self.model, self.P, pis, self.cfg.K)
        costs = self.model.expected_cost if self.spec.cost_vec is None else None
        return eval_loss(self.spec, lam, costs)

    def oracle(self) -> float:
        """Best achievable loss: the value-iteration policy (linear) or zero (imitation)."""
        if self.cfg.loss == "kl":
            return 0.0
        lam = compute_occupancy(self.model, self.P, self.expert, self.cfg.K)
        return float(eval_loss(self.spec, lam, self.model.expected_cost))


def empirical_baseline(data: TransitionDataset, env: FrozenLake, spec: LossSpec,
                       run_cfg: RunConfig, rng=None) -> tuple[PolicyParams, TrainTrace]:
    """Policy gradient on the MLE model: BR-PG with a point-mass posterior and expectation."""
    post = Posterior.point_mass(env.param_names, mle(data, env.param_names))
    return br_pg(env, post, spec, RiskMeasure(), run_cfg, rng=rng)


def run_replication(cfg: ExperimentConfig, n: int, rep: int, method_idx: int,
                    evaluator: Evaluator | None = None) -> ReplicationResult:
    """One (data size, replication, method) cell; depends on nothing else."""
    ev = evaluator or Evaluator(cfg)
    method = cfg.methods[method_idx]
    env = ev.env
    t0 = time.perf_counter()
    data = generate_data(env.lake, cfg.true_params, n, _seed(cfg, rep, n, _DATA_STREAM),
                         split=cfg.split, gamma=cfg.gamma)
    rng = np.random.default_rng(_seed(cfg, rep, n, method_idx))
    run_cfg = cfg.run_config(rng)
    if cfg.mode == "episodic":
        prior = Posterior.uniform(env.param_names)
        schedule = EpisodeSchedule.constant(cfg.episodes, cfg.iters, cfg.batch_size)
        params, trace, _ = episodic_br_pg(env, prior, cfg.true_params.as_array(), ev.spec,
                                          method.measure(), schedule, run_cfg, initial_data=data)
    elif method.name == "empirical":
        params, trace = empirical_baseline(data, env, ev.spec, run_cfg, rng=rng)
    else:
        post = posterior_update(Posterior.uniform(env.param_names), data)
        params, trace = br_pg(env, post, ev.spec, method.measure(), run_cfg, rng=rng)
    curve = ev(np.stack(trace.snapshots + [params.alpha]))
    loss = float(curve[-1])
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite loss for {method.label} rep {rep}")
    return ReplicationResult(method.label, n, method.beta, rep, loss,
                             time.perf_counter() - t0, curve, trace, params.alpha)


def _cell(args):
    cfg, n, rep, k = args
    try:
        return run_replication(cfg, n, rep, k)
    except Exception as exc:  # logged and excluded, see run_experiment
        log.warning("replication N=%d rep=%d method=%d failed: %s", n, rep, k, exc)
        return None


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResults:
    """Run all (N, replication, method) cells and collect them in a fixed order."""
    workers = cfg.workers if workers is None else workers
    cells = [(cfg, n, rep, k) for n in cfg.N for rep in range(cfg.reps)
             for k in range(len(cfg.methods))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_cell, cells, chunksize=max(1, len(cells) // (4 * workers))))
    else:
        out = [_cell(c) for c in cells]
    rows = [r for r in out if r is not None]
    failures = len(out) - len(rows)
    if failures > MAX_FAILURE_RATE * len(out):
        raise RuntimeError(f"{failures} of {len(out)} replications failed")
    ev = Evaluator(cfg)
    S, A = ev.env.n_states, ev.env.n_actions
    initial = float(ev(np.zeros((S, A))))
    return ExperimentResults(cfg, rows, ev.oracle(), initial, failures)


def summarize(results: ExperimentResults) -> list[dict]:
    groups: dict[tuple, list[ReplicationResult]] = {}
    for row in results.rows:
        groups.setdefault((row.method, row.N, row.beta), []).append(row)
    table = []
    for (method, n, beta), rows in groups.items():
        x = np.array([r.loss for r in rows])
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        table.append({"method": method, "N": n, "beta": beta, "mean_loss": float(x.mean()),
                      "stderr": se, "psv": positive_sided_variance(x)})
    return table


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _curves(results: ExperimentResults) -> dict[str, np.ndarray]:
    groups: dict[str, list[np.ndarray]] = {}
    for row in results.rows:
        groups.setdefault(f"{row.method} N={row.N}", []).append(row.curve)
    return {k: np.stack(v) for k, v in groups.items()}


def plot_curves(results: ExperimentResults, path: str | Path) -> None:
    """Mean true-model loss per iteration with a 95% normal band, as SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "brpg"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curves in _curves(results).items():
        mean = curves.mean(axis=0)
        se = curves.std(axis=0, ddof=1) / math.sqrt(len(curves)) if len(curves) > 1 else 0 * mean
        t = np.arange(mean.size)
        ax.plot(t, mean, label=label)
        ax.fill_between(t, mean - 1.96 * se, mean + 1.96 * se, alpha=0.25)
    if results.config.loss == "linear":
        ax.axhline(results.oracle, color="k", linestyle="--", linewidth=0.8, label="optimal")
    ax.set_xlabel("iteration")
    ax.set_ylabel("true-model loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_outputs(results: ExperimentResults, out_dir: str | Path,
                 plots: bool = True) -> list[Path]:
    """Write ``table.csv``, one ``trace_<method>_<rep>.csv`` per run and the plot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "table.csv"
    path.write_text(table_csv(summarize(results)))
    written.append(path)
    multi_n = len({r.N for r in results.rows}) > 1
    for row in results.rows:
        tag = f"{row.method}-N{row.N}" if multi_n else row.method
        path = out / f"trace_{tag}_{row.rep}.csv"
        row.trace.to_csv(path)
        written.append(path)
    if plots and results.rows:
        path = out / "loss_curves.svg"
        plot_curves(results, path)
        written.append(path)
    return written


def save_policy(alpha: np.ndarray, path: str | Path) -> None:
    """Flat text: a ``# n_states n_actions`` header, then one logit per line."""
    alpha = np.asarray(alpha, dtype=float)
    np.savetxt(path, alpha.ravel(), header=f"{alpha.shape[0]} {alpha.shape[1]}", fmt="%.17g")


def load_policy(path: str | Path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
    dims = tuple(int(v) for v in header)
    return np.loadtxt(path, ndmin=1).reshape(dims)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
