"""Multi-turn reconstruction adversary.

The adversary runs a fixed query schedule against a sanitizer, collects every
released root value, and reconstructs each root independently by a MAP
estimate over that root's candidate grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .allocator import Allocation
from .controller import Method, Release, RootRequest, TargetBundle
from .errors import ConfigError, MetricError
from .mechanisms import Grid, MechanismKind, NoiseParams, log_pmf_matrix
from .templates import Template


class Strategy(str, enum.Enum):
    A = "A"  # every query on the best-funded root
    B = "B"  # queries spread round-robin

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().upper())


class PriorKind(str, enum.Enum):
    UNIFORM = "uniform"
    INFORMED = "informed"

    @classmethod
    def parse(cls, value) -> "PriorKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower())


@dataclass(frozen=True)
class Prior:
    kind: PriorKind = PriorKind.UNIFORM
    mean: Mapping[str, float] = field(default_factory=dict)
    std: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind.parse(self.kind))
        if self.kind is PriorKind.INFORMED:
            if set(self.mean) != set(self.std):
                raise ConfigError("informed prior needs a mean and a std for every root")
            bad = [n for n, s in self.std.items() if not s > 0]
            if bad:
                raise ConfigError(f"informed prior std must be positive for {bad}")

    @classmethod
    def uniform(cls) -> "Prior":
        return cls(PriorKind.UNIFORM)

    @classmethod
    def informed(cls, mean: Mapping[str, float], std: Mapping[str, float]) -> "Prior":
        return cls(PriorKind.INFORMED, dict(mean), dict(std))

    @classmethod
    def from_template(cls, template: Template) -> "Prior":
        return cls.informed({r.name: r.pop_mean for r in template.roots}, {r.name: r.pop_std for r in template.roots})

    def log_density(self, root: str, values: np.ndarray) -> np.ndarray:
        if self.kind is PriorKind.UNIFORM:
            return np.zeros_like(values, dtype=float)
        z = (values - self.mean[root]) / self.std[root]
        return -0.5 * z * z


@dataclass(frozen=True)
class AttackPlan:
    strategy: Strategy
    q: int
    target_root: str | None
    schedule: tuple

    @property
    def turns(self) -> int:
        return len(self.schedule)

    def query_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for req in self.schedule:
            if isinstance(req, RootRequest):
                counts[req.name] = counts.get(req.name, 0) + 1
        return counts


def build_plan(strategy, q: int, allocation: Allocation | None, template: Template) -> AttackPlan:
    """``q`` root queries followed by one target bundle."""
    strategy = Strategy.parse(strategy)
    if int(q) != q or q < 1:
        raise ConfigError(f"query count must be a positive integer, got {q}")
    roots = template.root_names
    if strategy is Strategy.A:
        if allocation is None:
            raise ConfigError("strategy A needs the M-Opt allocation to pick its target root")
        target = allocation.argmax()
        queries = [RootRequest(target)] * q
    else:
        target = None
        queries = [RootRequest(roots[i % len(roots)]) for i in range(q)]
    return AttackPlan(strategy, int(q), target, tuple(queries) + (TargetBundle(),))


@dataclass
class Observations:
    """Released root values with the epsilon each was drawn at."""

    values: dict[str, list[float]] = field(default_factory=dict)
    eps: dict[str, list[float]] = field(default_factory=dict)

    def add(self, root: str, value: float, eps: float) -> None:
        self.values.setdefault(root, []).append(float(value))
        self.eps.setdefault(root, []).append(float(eps))

    def count(self, root: str) -> int:
        return len(self.values.get(root, ()))

    @classmethod
    def from_releases(cls, releases: Sequence[Release], roots: Sequence[str]) -> "Observations":
        obs = cls()
        wanted = set(roots)
        for rel in releases:
            for name, value in rel.values.items():
                if name in wanted:
                    obs.add(name, value, rel.eps[name])
        return obs


@dataclass(frozen=True)
class RootEstimate:
    value: float
    index: int
    identifiable: bool = True


def _grid_index(value: float, grid: Grid) -> int:
    s = int(round((value - grid.lower) / grid.delta))
    if not 0 <= s < grid.m or abs(s * grid.delta + grid.lower - value) > 1e-6 * grid.delta:
        raise ValueError(f"observation {value} is not on the grid [{grid.lower}, {grid.upper}]")
    return s


def map_estimate_root(values: Sequence[float], eps: Sequence[float], mechanism, grid: Grid, prior: Prior,
                      root: str, collapse_repeats: bool = False) -> RootEstimate:
    """MAP estimate of one root; ties go to the lower candidate index.

    With ``collapse_repeats`` identical (value, eps) observations count once,
    which is how an informed attacker treats replays of a cached release.
    """
    mechanism = MechanismKind.parse(mechanism)
    candidates = grid.values()
    pairs = list(zip(values, eps))
    if collapse_repeats:
        pairs = list(dict.fromkeys(pairs))
    if not pairs:
        if prior.kind is PriorKind.INFORMED:
            mu = min(max(prior.mean[root], grid.lower), grid.upper)
            idx = int(round((mu - grid.lower) / grid.delta))
            return RootEstimate(float(mu), idx, True)
        idx = (grid.m - 1) // 2
        return RootEstimate(float(candidates[idx]), idx, False)
    score = prior.log_density(root, candidates).astype(float)
    for value, e in pairs:
        # rows of the matrix are true positions, columns are outputs
        score = score + log_pmf_matrix(NoiseParams(mechanism, e), grid.m)[:, _grid_index(value, grid)]
    idx = int(np.argmax(score))
    return RootEstimate(float(candidates[idx]), idx, True)


def map_estimate(obs: Observations, mechanism, grids: Mapping[str, Grid], prior: Prior,
                 roots: Sequence[str] | None = None, collapse_repeats: bool = False) -> dict[str, RootEstimate]:
    """Per-root MAP over every root in ``roots`` (default: all grids)."""
    names = list(grids if roots is None else roots)
    return {
        n: map_estimate_root(obs.values.get(n, []), obs.eps.get(n, []), mechanism, grids[n], prior, n,
                             collapse_repeats)
        for n in names
    }


def collapse_for(method: Method) -> bool:
    """Cached methods replay one draw, so repeats carry no extra evidence."""
    return Method.parse(method).cached


def wmape_percent(estimates: Sequence[float], truths: Sequence[float]) -> float:
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if est.shape != tru.shape:
        raise ValueError("estimates and truths must be aligned")
    denom = np.abs(tru).sum()
    if denom == 0:
        raise MetricError("sum of absolute ground truths is zero")
    return float(np.abs(est - tru).sum() / denom * 100.0)


def reconstruction_error(estimates: Mapping[str, Sequence[float]], truths: Mapping[str, Sequence[float]],
                         scope: str = "all-roots", target_root: str | None = None) -> float:
    """wMAPE over patients, on the targeted root or averaged (unweighted) over roots."""
    if scope == "targeted-root":
        if target_root is None:
            raise ConfigError("targeted-root scope needs target_root")
        return wmape_percent(estimates[target_root], truths[target_root])
    if scope == "all-roots":
        per_root = [wmape_percent(estimates[n], truths[n]) for n in truths]
        return float(np.mean(per_root))
    raise ConfigError(f"unknown scope {scope!r}")


def per_root_errors(estimates: Mapping[str, Sequence[float]], truths: Mapping[str, Sequence[float]]) -> dict[str, float]:
    return {n: wmape_percent(estimates[n], truths[n]) for n in truths}


def mean_abs_error(estimates: Sequence[float], truths: Sequence[float]) -> float:
    return float(np.mean(np.abs(np.asarray(estimates, float) - np.asarray(truths, float))))
