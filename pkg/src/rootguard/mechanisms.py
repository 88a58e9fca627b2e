"""Index-space noise mechanisms.

Every numeric node is normalised onto the index grid ``{0, ..., m-1}`` and
noised there, so one unit of epsilon buys the same index-space
distinguishability for every node regardless of its physical width.

Three discrete mechanisms are provided, each with a sampler, an exact PMF
and the expected absolute noise used by the budget allocator:

* ``EXPONENTIAL``  P(s | t) proportional to exp(-eps |t - s| / 2)
* ``BOUNDED_LAPLACE``  t + Laplace(1/eps), clamped to [0, m-1], rounded
* ``STAIRCASE``  sign * (step + uniform offset) with geometric steps, clamped, rounded

The true position ``t`` may be any real in ``[0, m-1]``; distances ``|t - s|``
are used directly without first snapping ``t`` to the grid.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .rng import RandomStream

LOG_HALF = math.log(0.5)


class MechanismKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    BOUNDED_LAPLACE = "blap"
    STAIRCASE = "staircase"

    @classmethod
    def parse(cls, value: "str | MechanismKind") -> "MechanismKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "exp": cls.EXPONENTIAL,
            "exponential": cls.EXPONENTIAL,
            "blap": cls.BOUNDED_LAPLACE,
            "bounded_laplace": cls.BOUNDED_LAPLACE,
            "laplace": cls.BOUNDED_LAPLACE,
            "stair": cls.STAIRCASE,
            "staircase": cls.STAIRCASE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown mechanism {value!r}") from None


@dataclass(frozen=True)
class Grid:
    """Uniform discretisation of ``[lower, upper]`` into ``m`` candidates."""

    lower: float
    upper: float
    m: int = 1000

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError(f"grid bounds must be finite, got [{self.lower}, {self.upper}]")
        if not self.upper > self.lower:
            raise ValueError(f"grid needs upper > lower, got [{self.lower}, {self.upper}]")
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"grid needs an integer m >= 2, got {self.m}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def delta(self) -> float:
        """Spacing between consecutive candidates in domain units."""
        return self.width / (self.m - 1)

    def values(self) -> np.ndarray:
        return self.lower + self.delta * np.arange(self.m)

    def contains(self, x: float) -> bool:
        tol = 1e-12 * max(1.0, abs(self.lower), abs(self.upper))
        return self.lower - tol <= x <= self.upper + tol


@dataclass(frozen=True)
class NoiseParams:
    kind: MechanismKind
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "kind", MechanismKind.parse(self.kind))
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be a positive finite number, got {self.epsilon}")

    @classmethod
    def limit(cls, kind, epsilon: float) -> "NoiseParams":
        """Build params without validation, for epsilon -> 0 limit checks only."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "kind", MechanismKind.parse(kind))
        object.__setattr__(obj, "epsilon", float(epsilon))
        return obj


# --------------------------------------------------------------------------
# index space


def to_index(x: float, grid: Grid) -> float:
    """Continuous index position of ``x``; ``lower -> 0`` and ``upper -> m-1``."""
    if not (math.isfinite(x) and grid.contains(x)):
        raise DomainError(
            f"value {x!r} outside domain [{grid.lower}, {grid.upper}]", value=x, bounds=(grid.lower, grid.upper)
        )
    t = (grid.m - 1) * (x - grid.lower) / grid.width
    return min(max(t, 0.0), float(grid.m - 1))


def from_index(s: int, grid: Grid) -> float:
    if int(s) != s or not 0 <= s <= grid.m - 1:
        raise IndexError(f"index {s!r} outside [0, {grid.m - 1}]")
    if s == grid.m - 1:
        return grid.upper
    return int(s) * grid.delta + grid.lower


def _check_position(t: float, m: int) -> None:
    if not (math.isfinite(t) and 0.0 <= t <= m - 1):
        raise IndexError(f"position {t!r} outside [0, {m - 1}]")


# --------------------------------------------------------------------------
# symmetric noise laws
#
# BoundedLaplace and Staircase are continuous symmetric noises Z followed by
# clamp + round.  Their PMFs are interval masses of Z, computed in log space
# from the one-sided tail T(a) = P(Z >= a), a >= 0, and the near-zero mass
# H(a) = P(0 <= Z < a) = 1/2 - T(a).


def _laplace_log_tail(a: np.ndarray, eps: float) -> np.ndarray:
    return LOG_HALF - eps * a


def _laplace_near_mass(a: np.ndarray, eps: float) -> np.ndarray:
    return -0.5 * np.expm1(-eps * a)


def _stair_log_tail(a: np.ndarray, eps: float) -> np.ndarray:
    # each step [g, g+1) holds (1-e^-eps) e^(-eps g) / 2 per sign, uniform within the step
    p = -math.expm1(-eps)
    finite = np.isfinite(a)
    safe = np.where(finite, a, 0.0)
    g = np.floor(safe)
    frac = safe - g
    out = LOG_HALF - eps * g + np.log1p(-p * frac)
    return np.where(finite, out, -np.inf)


def _stair_near_mass(a: np.ndarray, eps: float) -> np.ndarray:
    p = -math.expm1(-eps)
    g = np.floor(a)
    frac = a - g
    return 0.5 * (-np.expm1(-eps * g) + np.exp(-eps * g) * p * frac)


def _log_diff(la: np.ndarray, lb: np.ndarray) -> np.ndarray:
    """log(exp(la) - exp(lb)) for la >= lb."""
    with np.errstate(divide="ignore", invalid="ignore"):
        d = lb - la
        out = la + np.log1p(-np.exp(d))
    return np.where(np.isneginf(lb), la, out)


def _log_interval_mass(a: np.ndarray, b: np.ndarray, log_tail, near_mass, eps: float) -> np.ndarray:
    """log P(a <= Z < b) for a symmetric noise Z; a may be -inf and b may be +inf."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(np.broadcast(a, b).shape)
    a, b = np.broadcast_arrays(a, b)
    right = a >= 0
    left = b <= 0
    mid = ~(right | left)
    with np.errstate(divide="ignore"):
        if right.any():
            out[right] = _log_diff(log_tail(a[right], eps), log_tail(b[right], eps))
        if left.any():
            out[left] = _log_diff(log_tail(-b[left], eps), log_tail(-a[left], eps))
        if mid.any():
            am, bm = -a[mid], b[mid]
            # near-zero mass on each side, with infinite ends taking the full half
            lo = np.where(np.isfinite(am), near_mass(np.where(np.isfinite(am), am, 0.0), eps), 0.5)
            hi = np.where(np.isfinite(bm), near_mass(np.where(np.isfinite(bm), bm, 0.0), eps), 0.5)
            out[mid] = np.log(lo + hi)
    return out


def _noise_parts(kind: MechanismKind):
    if kind is MechanismKind.BOUNDED_LAPLACE:
        return _laplace_log_tail, _laplace_near_mass
    if kind is MechanismKind.STAIRCASE:
        return _stair_log_tail, _stair_near_mass
    raise ValueError(f"{kind} has no continuous noise law")


def _interval_edges(t: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Noise intervals [a, b) that round to each output index; ends absorb the tails."""
    s = np.arange(m, dtype=float)
    t = np.asarray(t, dtype=float)[..., None]
    a = s - 0.5 - t
    b = s + 0.5 - t
    a[..., 0] = -np.inf
    b[..., -1] = np.inf
    return a, b


def log_pmf_vector(params: NoiseParams, t: float | np.ndarray, m: int) -> np.ndarray:
    """log P(s | t) for every output index s.  ``t`` may be an array of positions."""
    kind = params.kind
    eps = params.epsilon
    t_arr = np.asarray(t, dtype=float)
    if kind is MechanismKind.EXPONENTIAL:
        s = np.arange(m, dtype=float)
        logw = -0.5 * eps * np.abs(t_arr[..., None] - s)
        top = logw.max(axis=-1, keepdims=True)
        logz = top + np.log(np.exp(logw - top).sum(axis=-1, keepdims=True))
        return logw - logz
    log_tail, near = _noise_parts(kind)
    a, b = _interval_edges(t_arr, m)
    return _log_interval_mass(a, b, log_tail, near, eps)


def pmf_vector(params: NoiseParams, t: float | np.ndarray, m: int) -> np.ndarray:
    return np.exp(log_pmf_vector(params, t, m))


def pmf(params: NoiseParams, s: int, t: float, grid: Grid) -> float:
    """Probability that the mechanism outputs index ``s`` when the true position is ``t``."""
    if int(s) != s or not 0 <= s <= grid.m - 1:
        raise IndexError(f"index {s!r} outside [0, {grid.m - 1}]")
    _check_position(t, grid.m)
    return float(pmf_vector(params, t, grid.m)[int(s)])


@lru_cache(maxsize=16)
def log_pmf_matrix(params: NoiseParams, m: int) -> np.ndarray:
    """Read-only ``(m, m)`` matrix with entry ``[t, s] = log P(s | t)`` for integer t."""
    mat = log_pmf_vector(params, np.arange(m, dtype=float), m)
    mat.setflags(write=False)
    return mat


# --------------------------------------------------------------------------
# sampling


def _clamp_round(x: np.ndarray, m: int) -> np.ndarray:
    return np.floor(np.clip(x, 0.0, m - 1) + 0.5).astype(np.int64)


def sample_index(params: NoiseParams, t: float, m: int, rng: RandomStream, size=None):
    """Draw output indices.  Returns an int for ``size=None`` and an array otherwise."""
    _check_position(t, m)
    n = 1 if size is None else int(np.prod(size))
    eps = params.epsilon
    kind = params.kind
    if kind is MechanismKind.EXPONENTIAL:
        p = pmf_vector(params, t, m)
        cdf = np.cumsum(p)
        u = rng.random(n)
        s = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), m - 1).astype(np.int64)
    elif kind is MechanismKind.BOUNDED_LAPLACE:
        u = rng.random(n)
        with np.errstate(divide="ignore"):
            z = np.where(u < 0.5, np.log(2.0 * u), -np.log(2.0 * (1.0 - u))) / eps
        s = _clamp_round(t + z, m)
    else:
        u = rng.random((4, n))
        sign = np.where(u[0] < 0.5, -1.0, 1.0)
        step = np.floor(-np.log1p(-u[1]) / eps)
        gamma = staircase_gamma(eps)
        mag = np.where(u[3] < gamma, step + u[2], step + 1.0 - u[2])
        s = _clamp_round(t + sign * mag, m)
    if size is None:
        return int(s[0])
    return s.reshape(size)


def sample(params: NoiseParams, t: float, grid: Grid, rng: RandomStream, size=None):
    """Sanitised index for true position ``t`` on ``grid``."""
    return sample_index(params, t, grid.m, rng, size=size)


def sanitize_value(params: NoiseParams, x: float, grid: Grid, rng: RandomStream) -> float:
    """Index-normalise ``x``, noise it, and map the result back to domain units."""
    return from_index(sample(params, to_index(x, grid), grid, rng), grid)


def staircase_gamma(epsilon: float) -> float:
    """Probability of the inner-oriented branch of the staircase sampler."""
    return 1.0 / (1.0 + math.exp(epsilon / 2.0))


# --------------------------------------------------------------------------
# expected absolute noise


def evaluation_positions(m: int) -> tuple[int, ...]:
    """Grid points at which the worst-case expected noise is evaluated."""
    return tuple(sorted({int(round(q * (m - 1))) for q in (0.0, 0.25, 0.5, 0.75, 1.0)}))


def expected_abs_index_noise(params: NoiseParams, m: int, t: float | None = None) -> float:
    """E|s - t| in index units; at the worst of the evaluation positions when ``t`` is None."""
    positions = np.asarray(evaluation_positions(m) if t is None else [t], dtype=float)
    p = pmf_vector(params, positions, m)
    s = np.arange(m, dtype=float)
    dev = (np.abs(positions[:, None] - s) * p).sum(axis=1)
    return float(dev.max())


def expected_abs_noise(params: NoiseParams, grid: Grid) -> float:
    """Worst-case expected absolute noise in domain units (``delta * E|s - t|``)."""
    return grid.delta * expected_abs_index_noise(params, grid.m)
