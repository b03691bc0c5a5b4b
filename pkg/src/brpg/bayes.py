"""Conjugate Beta-Bernoulli beliefs over kernel parameters."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Dataset does not match the posterior it is applied to."""


class MLEFallbackWarning(UserWarning):
    """A component had no trials and its MLE fell back to 0.5."""


@dataclass(frozen=True)
class BetaBelief:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.a}, {self.b})")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class TransitionDataset:
    """Bernoulli trial counts, one record per ``(component, successes, trials)``.

    A success is the event whose probability the component parameter is
    (a slip for a slip-probability component, an escape for an escape one).
    """

    records: tuple[tuple[str, int, int], ...] = ()

    def __post_init__(self):
        recs = tuple((str(n), int(s), int(t)) for n, s, t in self.records)
        for name, s, t in recs:
            if s < 0 or t < 0 or s > t:
                raise DataError(f"invalid counts for {name!r}: {s} of {t}")
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    def __add__(self, other: "TransitionDataset") -> "TransitionDataset":
        return TransitionDataset(self.records + other.records)

    def totals(self) -> dict[str, tuple[int, int]]:
        out: dict[str, tuple[int, int]] = {}
        for name, s, t in self.records:
            s0, t0 = out.get(name, (0, 0))
            out[name] = (s0 + s, t0 + t)
        return out

    @property
    def n_trials(self) -> int:
        return sum(t for _, _, t in self.records)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "successes", "trials"])
        w.writerows(self.records)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> "TransitionDataset":
        p = Path(source)
        text = p.read_text() if "\n" not in str(source) and p.exists() else str(source)
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(tuple((r["component"], int(r["successes"]), int(r["trials"])) for r in rows))


@dataclass(frozen=True)
class Posterior:
    """Independent Beta beliefs, one per named kernel parameter."""

    names: tuple[str, ...]
    beliefs: tuple[BetaBelief, ...]
    n_observations: tuple[int, ...] = field(default=())

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise ValueError("component names must be unique")
        if len(self.beliefs) != len(names):
            raise ValueError("one belief per component is required")
        obs = tuple(self.n_observations) or (0,) * len(names)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "beliefs", tuple(self.beliefs))
        object.__setattr__(self, "n_observations", obs)

    @classmethod
    def uniform(cls, names: Sequence[str]) -> "Posterior":
        return cls(tuple(names), tuple(BetaBelief(1.0, 1.0) for _ in names))

    @classmethod
    def point_mass(cls, names: Sequence[str], theta: Sequence[float],
                   strength: float = 1e9) -> "Posterior":
        """Beliefs so concentrated at ``theta`` that samples are numerically exact."""
        beliefs = []
        for p in theta:
            p = float(np.clip(p, 1e-12, 1 - 1e-12))
            beliefs.append(BetaBelief(strength * p, strength * (1 - p)))
        return cls(tuple(names), tuple(beliefs))

    def __getitem__(self, name: str) -> BetaBelief:
        return self.beliefs[self.names.index(name)]

    @property
    def mean(self) -> np.ndarray:
        return np.array([b.mean for b in self.beliefs])


def posterior_update(prior: Posterior, data: TransitionDataset) -> Posterior:
    """Conjugate update ``Beta(a, b) -> Beta(a + successes, b + failures)``."""
    a = [b.a for b in prior.beliefs]
    b = [b.b for b in prior.beliefs]
    n = list(prior.n_observations)
    for name, succ, trials in data.records:
        if name not in prior.names:
            raise DataError(f"unknown component {name!r}")
        i = prior.names.index(name)
        a[i] += succ
        b[i] += trials - succ
        n[i] += trials
    return Posterior(prior.names, tuple(BetaBelief(x, y) for x, y in zip(a, b)), tuple(n))


def sample_theta(post: Posterior, r: int, rng: np.random.Generator | int | None) -> np.ndarray:
    """``r`` i.i.d. posterior draws as an ``(r, n_components)`` array."""
    if r < 1:
        raise ValueError("need at least one posterior sample")
    rng = np.random.default_rng(rng)
    a = np.array([b.a for b in post.beliefs])
    b = np.array([b.b for b in post.beliefs])
    return rng.beta(a, b, size=(r, len(a)))


def mle(data: TransitionDataset, names: Iterable[str]) -> np.ndarray:
    """Success ratio per component; components without trials fall back to 0.5."""
    totals = data.totals()
    out = []
    missing = []
    for name in names:
        s, t = totals.get(name, (0, 0))
        if t == 0:
            missing.append(name)
            out.append(0.5)
        else:
            out.append(s / t)
    if missing:
        warnings.warn(f"no trials for {missing}; MLE set to 0.5", MLEFallbackWarning, stacklevel=2)
    return np.array(out)
