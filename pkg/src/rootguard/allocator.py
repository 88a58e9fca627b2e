"""Privacy-budget allocation across Category-II roots.

Three paths, all returning an :class:`Allocation` whose budgets sum to ``B``:

* :func:`uniform_allocation` splits ``B`` evenly (M-Roots).
* :func:`closed_form_allocation` uses the Laplace-limit optimum
  ``eps_i ~ sqrt(h_i * delta_i)`` with iterative clamping at ``eps_min``.
* :func:`numeric_allocation` minimises ``sum_i h_i * eta_i(eps_i)`` over the
  exact discrete expected-noise curve of a mechanism, by water-filling on the
  Lagrange multiplier.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError, SolverError
from .mechanisms import Grid, MechanismKind, NoiseParams, expected_abs_index_noise
from .templates import Template, target_gradient

DEFAULT_EPS_MIN = 0.001
BUDGET_TOL = 1e-9


@dataclass(frozen=True)
class Allocation:
    per_root: dict[str, float]
    total: float
    clamped: frozenset[str] = frozenset()
    eps_min: float = DEFAULT_EPS_MIN
    fallback_uniform: bool = False

    def __post_init__(self):
        s = sum(self.per_root.values())
        if abs(s - self.total) > BUDGET_TOL * max(1.0, self.total):
            raise ConfigError(f"allocation sums to {s}, expected {self.total}")
        low = [n for n, e in self.per_root.items() if e < self.eps_min * (1 - 1e-12)]
        if low:
            raise ConfigError(f"roots {low} fall below eps_min={self.eps_min}")

    def __getitem__(self, name: str) -> float:
        return self.per_root[name]

    @property
    def roots(self) -> tuple[str, ...]:
        return tuple(self.per_root)

    def shares(self) -> dict[str, float]:
        return {n: e / self.total for n, e in self.per_root.items()}

    def argmax(self) -> str:
        """Best-funded root; ties go to the first root in order."""
        best = None
        for name, eps in self.per_root.items():
            if best is None or eps > self.per_root[best]:
                best = name
        return best

    def to_dict(self) -> dict:
        return {
            "per_root": dict(self.per_root),
            "total": self.total,
            "clamped": sorted(self.clamped),
            "eps_min": self.eps_min,
            "fallback_uniform": self.fallback_uniform,
        }


@dataclass(frozen=True)
class SensitivityProfile:
    """Per-root target sensitivities ``h`` and grid spacings ``delta``."""

    h: dict[str, float]
    delta: dict[str, float]
    widths: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.h) != set(self.delta):
            raise ValueError("h and delta must cover the same roots")
        if any(v < 0 or not math.isfinite(v) for v in self.h.values()):
            raise ValueError("sensitivities must be finite and non-negative")

    @property
    def roots(self) -> tuple[str, ...]:
        return tuple(self.h)

    @property
    def weights(self) -> dict[str, float]:
        return {n: math.sqrt(self.h[n] * self.delta[n]) for n in self.h}

    @classmethod
    def from_weights(cls, weights: Mapping[str, float]) -> "SensitivityProfile":
        """Profile whose closed-form weights equal ``weights`` (unit spacing)."""
        return cls(h={n: float(w) ** 2 for n, w in weights.items()}, delta={n: 1.0 for n in weights})

    def scaled(self, factor: float) -> "SensitivityProfile":
        return SensitivityProfile({n: v * factor for n, v in self.h.items()}, dict(self.delta), dict(self.widths))


def _require_budget(budget: float, k: int, eps_min: float) -> None:
    if not (math.isfinite(budget) and budget > 0):
        raise ConfigError(f"total budget must be positive, got {budget}")
    if k < 1:
        raise ConfigError("need at least one root")
    if budget < k * eps_min * (1 - 1e-12):
        raise ConfigError(f"budget {budget} cannot give {k} roots at least eps_min={eps_min}")


def uniform_allocation(budget: float, roots: Sequence[str], eps_min: float = DEFAULT_EPS_MIN) -> Allocation:
    roots = list(roots)
    _require_budget(budget, len(roots), eps_min)
    each = budget / len(roots)
    return Allocation({r: each for r in roots}, float(budget), frozenset(), eps_min)


def compute_sensitivities(template: Template, mu=None, grids: Mapping[str, Grid] | None = None,
                          roots: Sequence[str] | None = None) -> SensitivityProfile:
    """``h_i = |dg/dx_i|`` at the population mean, with the root grid spacings."""
    mu = template.means if mu is None else mu
    grad = np.abs(target_gradient(template, mu))
    grids = template.grids() if grids is None else grids
    names = template.root_names if roots is None else tuple(roots)
    h = {n: float(grad[template.root_index(n)]) for n in names}
    return SensitivityProfile(h, {n: grids[n].delta for n in names}, {n: grids[n].width for n in names})


def _finalize(per_root: dict[str, float], budget: float, active: Sequence[str]) -> dict[str, float]:
    """Put any floating-point residual of the budget onto the active roots."""
    residual = budget - sum(per_root.values())
    if active and residual != 0.0:
        mass = sum(per_root[n] for n in active)
        for n in active:
            per_root[n] += residual * per_root[n] / mass
    return per_root


def closed_form_allocation(budget: float, profile: SensitivityProfile, eps_min: float = DEFAULT_EPS_MIN) -> Allocation:
    names = list(profile.roots)
    _require_budget(budget, len(names), eps_min)
    weights = profile.weights
    if all(w == 0 for w in weights.values()):
        warnings.warn("all sensitivities are zero; falling back to uniform allocation", RuntimeWarning)
        alloc = uniform_allocation(budget, names, eps_min)
        return Allocation(alloc.per_root, alloc.total, frozenset(), eps_min, fallback_uniform=True)

    clamped = {n for n in names if weights[n] == 0}
    for _ in range(len(names) + 1):
        active = [n for n in names if n not in clamped]
        remaining = budget - len(clamped) * eps_min
        total_w = sum(weights[n] for n in active)
        eps = {n: weights[n] / total_w * remaining for n in active}
        low = {n for n, e in eps.items() if e < eps_min}
        if not low:
            break
        clamped |= low
    per_root = {n: (eps_min if n in clamped else eps[n]) for n in names}
    per_root = _finalize(per_root, budget, [n for n in names if n not in clamped])
    return Allocation(per_root, float(budget), frozenset(clamped), eps_min)


# --------------------------------------------------------------------------
# numeric path


class NoiseCurve:
    """Worst-case expected index noise ``E(eps)`` of one mechanism on an m-point grid.

    Values are tabulated on a log-spaced epsilon lattice and interpolated
    monotonically in log-log space.  Instances are read-only after construction.
    """

    def __init__(self, kind: MechanismKind, m: int, eps_lo: float = 1e-4, eps_hi: float = 200.0, points: int = 321):
        self.kind = MechanismKind.parse(kind)
        self.m = m
        self.eps_lo = eps_lo
        self.eps_hi = eps_hi
        lattice = np.geomspace(eps_lo, eps_hi, points)
        vals = np.array([expected_abs_index_noise(NoiseParams(self.kind, e), m) for e in lattice])
        vals = np.minimum.accumulate(vals)  # enforce monotone decrease against rounding noise
        self._log_interp = PchipInterpolator(np.log(lattice), np.log(vals), extrapolate=True)

    def __call__(self, eps: float) -> float:
        return float(np.exp(self._log_interp(math.log(eps))))

    def slope(self, eps: float, rel_step: float = 1e-4) -> float:
        """Central finite-difference derivative dE/d(eps)."""
        h = eps * rel_step
        return (self(eps + h) - self(eps - h)) / (2.0 * h)


@lru_cache(maxsize=32)
def noise_curve(kind: MechanismKind, m: int) -> NoiseCurve:
    return NoiseCurve(MechanismKind.parse(kind), m)


def objective(alloc: Mapping[str, float], profile: SensitivityProfile, kind, grids: Mapping[str, Grid]) -> float:
    """``sum_i h_i * eta_i(eps_i)`` in domain units."""
    total = 0.0
    for n, e in alloc.items():
        curve = noise_curve(MechanismKind.parse(kind), grids[n].m)
        total += profile.h[n] * grids[n].delta * curve(e)
    return total


def numeric_allocation(budget: float, profile: SensitivityProfile, kind, grids: Mapping[str, Grid],
                       eps_min: float = DEFAULT_EPS_MIN, max_iter: int = 60, tol: float = 1e-6) -> Allocation:
    names = list(profile.roots)
    _require_budget(budget, len(names), eps_min)
    kind = MechanismKind.parse(kind)
    if len(names) == 1:
        return Allocation({names[0]: float(budget)}, float(budget), frozenset(), eps_min)
    if all(profile.h[n] == 0 for n in names):
        warnings.warn("all sensitivities are zero; falling back to uniform allocation", RuntimeWarning)
        alloc = uniform_allocation(budget, names, eps_min)
        return Allocation(alloc.per_root, alloc.total, frozenset(), eps_min, fallback_uniform=True)

    curves = {n: noise_curve(kind, grids[n].m) for n in names}
    cost = {n: profile.h[n] * grids[n].delta for n in names}
    active = [n for n in names if cost[n] > 0]
    eps_hi = budget - (len(names) - 1) * eps_min

    def benefit(n: str, e: float) -> float:
        return -cost[n] * curves[n].slope(e)

    def eps_at(n: str, lam: float) -> float:
        # largest eps whose marginal benefit still reaches lam
        if benefit(n, eps_min) <= lam:
            return eps_min
        if benefit(n, eps_hi) >= lam:
            return eps_hi
        lo, hi = math.log(eps_min), math.log(eps_hi)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if benefit(n, math.exp(mid)) > lam:
                lo = mid
            else:
                hi = mid
        return math.exp(0.5 * (lo + hi))

    def spend(lam: float) -> dict[str, float]:
        out = {n: eps_min for n in names}
        for n in active:
            out[n] = eps_at(n, lam)
        return out

    lam_hi = max(benefit(n, eps_min) for n in active) * 2.0
    lam_lo = min(benefit(n, eps_hi) for n in active) * 0.5
    if not lam_lo > 0:
        lam_lo = 1e-300
    lo, hi = math.log(lam_lo), math.log(lam_hi)
    alloc = spend(math.exp(hi))
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        alloc = spend(math.exp(mid))
        if sum(alloc.values()) > budget:
            lo = mid
        else:
            hi = mid
    alloc = spend(math.exp(0.5 * (lo + hi)))
    residual = sum(alloc.values()) - budget
    if abs(residual) > tol * max(1.0, budget):
        raise SolverError(f"budget residual {residual:.3e} after {max_iter} iterations", residual=residual)

    # same clamping rule as the closed form: anything at or below the floor sits exactly on it
    clamped = {n for n in names if n not in active or alloc[n] <= eps_min * (1 + 1e-9)}
    for n in clamped:
        alloc[n] = eps_min
    free = [n for n in names if n not in clamped]
    alloc = _finalize(alloc, budget, free)
    return Allocation(alloc, float(budget), frozenset(clamped), eps_min)


def allocate(template: Template, budget: float, kind, method: str = "numeric", mu=None,
             eps_min: float = DEFAULT_EPS_MIN) -> Allocation:
    """M-Opt allocation for a template's independent roots."""
    roots = template.independent_roots
    grids = template.grids()
    profile = compute_sensitivities(template, mu, grids, roots)
    if method == "closed":
        return closed_form_allocation(budget, profile, eps_min)
    if method == "numeric":
        return numeric_allocation(budget, profile, kind, grids, eps_min)
    raise ConfigError(f"unknown allocation solver {method!r}")


def budget_multiplier(label: str | int, k: int) -> int:
    """Turn count t for a multiplier label such as ``'2k+1'`` (integers pass through)."""
    if isinstance(label, int):
        return label
    text = str(label).replace(" ", "").lower()
    table = {"k+1": k + 1, "2k+1": 2 * k + 1, "3k+1": 3 * k + 1, "k": k}
    if text in table:
        return table[text]
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"unknown budget multiplier {label!r}") from None
