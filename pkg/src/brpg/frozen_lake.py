"""Frozen Lake with unknown slip and hole-escape probabilities.

State ``5 * row + col``; actions 0=left, 1=down, 2=right, 3=up. On ice the
agent moves as intended with probability ``1 - theta_s`` and to either
perpendicular side with ``theta_s / 2``; in a hole it moves as intended with
probability ``theta_e`` and stays otherwise; the goal is absorbing and free.
Moves into the border leave the agent where it is.

Per-step cost is 1 on ice and ``Uniform[1, 1 + 2 (1 - theta_e)]`` in a hole.
Every loss used here is a function of the occupancy measure and expected
costs, so only the mean ``2 - theta_e`` of the hole cost enters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bayes import TransitionDataset
from .mdp import MdpModel, compute_occupancy

LEFT, DOWN, RIGHT, UP = range(4)
MOVES = {LEFT: (0, -1), DOWN: (1, 0), RIGHT: (0, 1), UP: (-1, 0)}
PERPENDICULAR = {LEFT: (UP, DOWN), RIGHT: (UP, DOWN), UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT)}
PARAM_NAMES = ("theta_s", "theta_e")

DEFAULT_MAP = (
    "SFFFF",
    "HFHFF",
    "FFFHF",
    "HHFFH",
    "FFFFG",
)


@dataclass(frozen=True)
class LakeMap:
    grid: tuple[str, ...] = DEFAULT_MAP

    def __post_init__(self):
        grid = tuple(row.strip() for row in self.grid)
        object.__setattr__(self, "grid", grid)
        if len(grid) != 5 or any(len(row) != 5 for row in grid):
            raise ValueError("lake must be 5 x 5")
        flat = "".join(grid)
        if set(flat) - set("SFHG"):
            raise ValueError("cells must be one of S, F, H, G")
        if flat.count("S") != 1 or flat.count("G") != 1 or flat.count("H") != 6:
            raise ValueError("lake needs one S, one G and six H")

    @classmethod
    def from_text(cls, text: str) -> "LakeMap":
        return cls(tuple(line for line in text.split() if line))

    @classmethod
    def from_file(cls, path: str | Path) -> "LakeMap":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        return "\n".join(self.grid) + "\n"

    @property
    def n_rows(self) -> int:
        return len(self.grid)

    @property
    def n_cols(self) -> int:
        return len(self.grid[0])

    @property
    def n_states(self) -> int:
        return self.n_rows * self.n_cols

    def cell(self, s: int) -> str:
        return self.grid[s // self.n_cols][s % self.n_cols]

    def state(self, row: int, col: int) -> int:
        return row * self.n_cols + col

    def _find(self, label: str) -> list[tuple[int, int]]:
        return [(i, j) for i, row in enumerate(self.grid) for j, c in enumerate(row) if c == label]

    @property
    def start(self) -> tuple[int, int]:
        return self._find("S")[0]

    @property
    def goal(self) -> tuple[int, int]:
        return self._find("G")[0]

    @property
    def holes(self) -> list[tuple[int, int]]:
        return self._find("H")

    def move(self, s: int, a: int) -> int:
        i, j = divmod(s, self.n_cols)
        di, dj = MOVES[a]
        i2, j2 = i + di, j + dj
        if 0 <= i2 < self.n_rows and 0 <= j2 < self.n_cols:
            return self.state(i2, j2)
        return s


@dataclass(frozen=True)
class LakeParams:
    theta_s: float
    theta_e: float

    def __post_init__(self):
        if not (0.0 <= self.theta_s <= 1.0 and 0.0 <= self.theta_e <= 1.0):
            raise ValueError("lake parameters must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_s, self.theta_e])


def _kernel_parts(lake: LakeMap):
    """``P(theta) = base + theta_s * d_slip + theta_e * d_escape``."""
    S, A = lake.n_states, 4
    base = np.zeros((S, A, S))
    d_slip = np.zeros((S, A, S))
    d_esc = np.zeros((S, A, S))
    for s in range(S):
        kind = lake.cell(s)
        for a in range(A):
            if kind == "G":
                base[s, a, s] = 1.0
            elif kind == "H":
                base[s, a, s] = 1.0
                d_esc[s, a, lake.move(s, a)] += 1.0
                d_esc[s, a, s] -= 1.0
            else:
                target = lake.move(s, a)
                base[s, a, target] = 1.0
                d_slip[s, a, target] -= 1.0
                for b in PERPENDICULAR[a]:
                    d_slip[s, a, lake.move(s, b)] += 0.5
    return base, d_slip, d_esc


def build_kernel(lake: LakeMap, params: LakeParams) -> np.ndarray:
    """Transition tensor ``P[s, a, s']`` for the given slip/escape probabilities."""
    base, d_slip, d_esc = _kernel_parts(lake)
    P = base + params.theta_s * d_slip + params.theta_e * d_esc
    return np.clip(P, 0.0, None)


def _cell_masks(lake: LakeMap):
    labels = np.array([lake.cell(s) for s in range(lake.n_states)])
    return labels == "H", labels == "G"


def build_costs(lake: LakeMap, params: LakeParams) -> np.ndarray:
    """Expected per-step cost: 1 on ice, ``2 - theta_e`` in holes, 0 at the goal."""
    hole, goal = _cell_masks(lake)
    c = np.where(hole, 2.0 - params.theta_e, np.where(goal, 0.0, 1.0))
    return np.repeat(c[:, None], 4, axis=1)


class FrozenLake:
    """The lake as a parametric MDP family over ``theta = (theta_s, theta_e)``."""

    param_names = PARAM_NAMES
    n_actions = 4

    def __init__(self, lake: LakeMap | None = None, gamma: float = 0.97):
        self.lake = lake or LakeMap()
        self.gamma = gamma
        self.n_states = self.lake.n_states
        self._base, self._d_slip, self._d_esc = _kernel_parts(self.lake)
        self._hole, self._goal = _cell_masks(self.lake)
        self.init_dist = np.zeros(self.n_states)
        self.init_dist[self.lake.state(*self.lake.start)] = 1.0
        ice = np.where(self._goal, 0.0, 1.0)
        self._cost_base = np.where(self._hole, 2.0, ice)[:, None].repeat(4, axis=1)
        self._cost_esc = np.where(self._hole, -1.0, 0.0)[:, None].repeat(4, axis=1)

    def kernels(self, thetas: np.ndarray) -> np.ndarray:
        th = np.asarray(thetas, dtype=float)
        ts = th[..., 0, None, None, None]
        te = th[..., 1, None, None, None]
        return np.clip(self._base + ts * self._d_slip + te * self._d_esc, 0.0, None)

    def costs(self, thetas: np.ndarray) -> np.ndarray:
        te = np.asarray(thetas, dtype=float)[..., 1, None, None]
        return self._cost_base + te * self._cost_esc

    def model(self, thetas: np.ndarray | None = None) -> MdpModel:
        cost = self._cost_base if thetas is None else self.costs(thetas)
        return MdpModel(self.n_states, 4, self.gamma, self.init_dist, cost)

    def instantiate(self, thetas: np.ndarray) -> tuple[MdpModel, np.ndarray]:
        return self.model(thetas), self.kernels(thetas)

    def simulate(self, theta, policy: np.ndarray, n: int, rng) -> TransitionDataset:
        """Run ``policy`` for ``n`` steps from the start and count Bernoulli trials.

        Every step on ice is one slip trial, every step in a hole one escape
        trial; reaching the goal restarts the walk at the start cell.
        """
        rng = np.random.default_rng(rng)
        theta_s, theta_e = float(theta[0]), float(theta[1])
        start = self.lake.state(*self.lake.start)
        s = start
        slips = slip_trials = escapes = escape_trials = 0
        for _ in range(n):
            kind = self.lake.cell(s)
            if kind == "G":
                s = start
                kind = self.lake.cell(s)
            a = int(rng.choice(4, p=policy[s]))
            if kind == "H":
                escape_trials += 1
                if rng.random() < theta_e:
                    escapes += 1
                    s = self.lake.move(s, a)
            else:
                slip_trials += 1
                if rng.random() < theta_s:
                    slips += 1
                    a = PERPENDICULAR[a][int(rng.integers(2))]
                s = self.lake.move(s, a)
        return TransitionDataset((("theta_s", slips, slip_trials),
                                  ("theta_e", escapes, escape_trials)))


def generate_data(lake: LakeMap, true_params: LakeParams, n: int, seed,
                  policy: np.ndarray | None = None, split: float = 0.5,
                  gamma: float = 0.97) -> TransitionDataset:
    """``n`` historical trials of the unknown probabilities.

    Without a policy, ``round(split * n)`` independent slip trials and the rest
    escape trials are drawn (all slip trials if the lake has no holes). With a
    policy, ``n`` steps of that policy are simulated instead.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    if n == 0:
        return TransitionDataset()
    if policy is not None:
        return FrozenLake(lake, gamma).simulate(true_params.as_array(), policy, n, rng)
    n_slip = n if not lake.holes else int(math.floor(split * n + 0.5))
    n_esc = n - n_slip
    slips = int(rng.binomial(n_slip, true_params.theta_s)) if n_slip else 0
    escapes = int(rng.binomial(n_esc, true_params.theta_e)) if n_esc else 0
    records = []
    if n_slip:
        records.append(("theta_s", slips, n_slip))
    if n_esc:
        records.append(("theta_e", escapes, n_esc))
    return TransitionDataset(tuple(records))


def expert_state_dist(lake: LakeMap, true_params: LakeParams, expert_policy: np.ndarray,
                      gamma: float = 0.97, K: int = 130, floor: float | None = None) -> np.ndarray:
    """Normalised state occupancy ``J = (1 - gamma) sum_a lambda(s, a)`` of an expert."""
    env = FrozenLake(lake, gamma)
    theta = true_params.as_array()
    lam = compute_occupancy(env.model(theta), env.kernels(theta), expert_policy, K)
    J = (1.0 - gamma) * lam.sum(axis=1)
    J = J / J.sum()
    if floor is not None:
        J = np.maximum(J, floor)
        J = J / J.sum()
    return J
