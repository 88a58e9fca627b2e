"""Per-session sanitizer: the three release configurations and their turn protocol.

``M-All`` noises every release independently at the per-release epsilon.
``M-Roots`` and ``M-Opt`` noise each independent root exactly once at session
start (uniform or sensitivity-weighted budgets respectively) and answer every
later request from that cache, derived nodes included, by deterministic
post-processing.

Noise for root ``i``'s ``j``-th draw always comes from the same counter-based
stream, whichever configuration asks for it.  So an ``M-All`` session's first
release of a root is bit-identical to the ``M-Roots`` cache entry whenever the
per-root epsilons match.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Union

from .allocator import Allocation
from .category1 import DigitDomain, TokenDomain, sanitize_category1
from .errors import ConfigError, DomainError, ProtocolError, RequestError
from .mechanisms import Grid, MechanismKind, NoiseParams, sanitize_value
from .rng import derived_stream, root_stream
from .templates import DerivedNode, Template, function_range

__all__ = [
    "Method", "RootRequest", "DerivedRequest", "TargetBundle", "Request", "SanitizerConfig", "Release",
    "Sanitizer", "initialize", "answer", "node_grid", "sanitize_category1", "TokenDomain", "DigitDomain",
]


class Method(str, enum.Enum):
    ALL = "M-All"
    ROOTS = "M-Roots"
    OPT = "M-Opt"

    @classmethod
    def parse(cls, value: "str | Method") -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        if not key.startswith("m-"):
            key = "m-" + key
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown method {value!r}; choose M-All, M-Roots or M-Opt")

    @property
    def cached(self) -> bool:
        return self is not Method.ALL


@dataclass(frozen=True)
class RootRequest:
    name: str


@dataclass(frozen=True)
class DerivedRequest:
    """Ask for a derived node, by template node name or as an ad-hoc :class:`DerivedNode`."""

    node: Union[str, DerivedNode]

    @property
    def name(self) -> str:
        return self.node if isinstance(self.node, str) else self.node.name


@dataclass(frozen=True)
class TargetBundle:
    """All roots of the target in one turn."""


Request = Union[RootRequest, DerivedRequest, TargetBundle]


def request_record(req: Request) -> dict:
    if isinstance(req, RootRequest):
        return {"kind": "root", "name": req.name}
    if isinstance(req, DerivedRequest):
        parents = None if isinstance(req.node, str) else list(req.node.parents)
        return {"kind": "derived", "name": req.name, "parents": parents}
    return {"kind": "bundle"}


@dataclass(frozen=True)
class SanitizerConfig:
    method: Method
    mechanism: MechanismKind
    epsilon: float
    turns: int
    allocation: Allocation | None = None
    seed: int = 0
    # M-All only: re-noise roots at the bundle turn (True) or reuse each root's latest draw
    bundle_fresh: bool = True

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "mechanism", MechanismKind.parse(self.mechanism))
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.turns) != self.turns or self.turns < 1:
            raise ConfigError(f"turns must be a positive integer, got {self.turns}")
        if self.method is Method.ALL and self.allocation is not None:
            raise ConfigError("M-All does not pool budget and takes no allocation")

    @property
    def budget(self) -> float:
        return self.turns * self.epsilon


@dataclass(frozen=True)
class Release:
    turn: int
    request: Request
    values: dict[str, float]
    method: Method
    eps: dict[str, float]

    def to_record(self) -> dict:
        return {
            "turn": self.turn,
            "request": request_record(self.request),
            "values": self.values,
            "method": self.method.value,
            "eps": self.eps,
        }


def _composed(template: Template, node: DerivedNode, extra: Mapping[str, DerivedNode]) -> Callable[..., float]:
    """``node`` as a function of the template's full root vector."""
    nodes = {**template.nodes(), **extra}
    names = template.root_names

    def value(name: str, env: dict) -> float:
        if name in env:
            return env[name]
        n = nodes[name]
        env[name] = n(*(value(p, env) for p in n.parents))
        return env[name]

    def f(*roots: float) -> float:
        env = dict(zip(names, roots))
        return node(*(value(p, env) for p in node.parents))

    return f


@lru_cache(maxsize=256)
def node_grid(template: Template, node: DerivedNode) -> Grid:
    """Grid of a derived node: its range over the template's root box."""
    func = _composed(template, node, {node.name: node})
    lo, hi = function_range(func, [(r.lower, r.upper) for r in template.roots])
    return Grid(lo, hi, template.m)


class Sanitizer:
    """Sanitizer state for one (template, patient) session."""

    def __init__(self, config: SanitizerConfig, template: Template, true_roots, patient: int = 0):
        self.config = config
        self.template = template
        self.patient = int(patient)
        if isinstance(true_roots, Mapping):
            true_roots = [true_roots[n] for n in template.root_names]
        values = [float(v) for v in true_roots]
        if len(values) != template.k:
            raise ConfigError(f"{template.name} expects {template.k} root values, got {len(values)}")
        self._truth = dict(zip(template.root_names, values))
        grids = template.grids()
        for name, x in self._truth.items():
            if not grids[name].contains(x):
                raise DomainError(f"{name}={x} outside its domain", value=x, bounds=(grids[name].lower, grids[name].upper))
        self._grids = grids
        self._deps = {d.name: d for d in template.dependencies}
        self._draw_counter: dict[str, int] = {}
        self._latest: dict[str, float] = {}
        self.draw_log: list[tuple[str, int]] = []
        self.release_log: list[Release] = []
        self.cache: dict[str, float] = {}
        self._root_eps: dict[str, float] = {}
        if config.method.cached:
            self._initialize_cache()

    # ---------------------------------------------------------------- setup

    def _initialize_cache(self) -> None:
        alloc = self.config.allocation
        if alloc is None:
            raise ConfigError(f"{self.config.method.value} needs an allocation")
        independent = self.template.independent_roots
        missing = [n for n in independent if n not in alloc.per_root]
        if missing:
            raise ConfigError(f"allocation lacks roots {missing}")
        for name in independent:
            eps = alloc.per_root[name]
            self._root_eps[name] = eps
            self.cache[name] = self._draw_root(name, eps)
        for name in self.template.root_names:
            if name in self._deps:
                self.cache[name] = self._recompute_dependent(name)
                self._root_eps[name] = 0.0

    def _recompute_dependent(self, name: str) -> float:
        dep = self._deps[name]
        raw = dep(*(self.cache[p] for p in dep.parents))
        g = self._grids[name]
        return min(max(raw, g.lower), g.upper)

    def _draw_root(self, name: str, eps: float) -> float:
        draw = self._draw_counter.get(name, 0)
        self._draw_counter[name] = draw + 1
        idx = self.template.root_index(name)
        rng = root_stream(self.config.seed, self.template.name, self.patient, idx, draw)
        value = sanitize_value(NoiseParams(self.config.mechanism, eps), self._truth[name], self._grids[name], rng)
        self.draw_log.append((name, draw))
        self._latest[name] = value
        return value

    def _draw_derived(self, node: DerivedNode, true_value: float) -> float:
        draw = self._draw_counter.get(node.name, 0)
        self._draw_counter[node.name] = draw + 1
        grid = node_grid(self.template, node)
        rng = derived_stream(self.config.seed, self.template.name, self.patient, node.name, draw)
        x = min(max(true_value, grid.lower), grid.upper)
        self.draw_log.append((node.name, draw))
        return sanitize_value(NoiseParams(self.config.mechanism, self.config.epsilon), x, grid, rng)

    # ---------------------------------------------------------------- queries

    @property
    def method(self) -> Method:
        return self.config.method

    @property
    def turns_used(self) -> int:
        return len(self.release_log)

    @property
    def turns_left(self) -> int:
        return self.config.turns - self.turns_used

    @property
    def noise_draws(self) -> int:
        return len(self.draw_log)

    def _resolve(self, req: DerivedRequest) -> tuple[DerivedNode, dict[str, DerivedNode]]:
        known = self.template.nodes()
        if isinstance(req.node, str):
            if req.node not in known:
                raise RequestError(f"{self.template.name} has no derived node {req.node!r}")
            node, extra = known[req.node], {}
        else:
            node, extra = req.node, {req.node.name: req.node}
        self._check_acyclic(node, {**known, **extra})
        return node, extra

    def _check_acyclic(self, node: DerivedNode, known: Mapping[str, DerivedNode]) -> None:
        roots = set(self.template.root_names)
        stack: list[str] = []

        def visit(n: DerivedNode) -> None:
            if n.name in stack:
                raise RequestError(f"derived node cycle through {n.name!r}")
            stack.append(n.name)
            for p in n.parents:
                if p in roots:
                    continue
                if p not in known:
                    raise RequestError(f"undeclared parent {p!r} of derived node {n.name!r}")
                visit(known[p])
            stack.pop()

        visit(node)

    def _evaluate(self, node: DerivedNode, extra: Mapping[str, DerivedNode], base: Mapping[str, float]) -> float:
        f = _composed(self.template, node, extra)
        return float(f(*(base[n] for n in self.template.root_names)))

    def answer(self, request: Request):
        """Release the value(s) for one turn.  Bundles return a name-to-value dict."""
        if self.turns_left <= 0:
            raise ProtocolError(f"all {self.config.turns} turns have been used")
        cfg = self.config
        if isinstance(request, RootRequest):
            if request.name not in self._truth:
                raise RequestError(f"{self.template.name} has no root {request.name!r}")
            if cfg.method.cached:
                value, eps = self.cache[request.name], self._root_eps[request.name]
            else:
                value, eps = self._draw_root(request.name, cfg.epsilon), cfg.epsilon
            values, used = {request.name: value}, {request.name: eps}
            result = value
        elif isinstance(request, DerivedRequest):
            node, extra = self._resolve(request)
            if cfg.method.cached:
                value, eps = self._evaluate(node, extra, self.cache), 0.0
            else:
                value, eps = self._draw_derived(node, self._evaluate(node, extra, self._truth)), cfg.epsilon
            values, used = {node.name: value}, {node.name: eps}
            result = value
        elif isinstance(request, TargetBundle):
            names = self.template.root_names
            if cfg.method.cached:
                values = {n: self.cache[n] for n in names}
                used = {n: self._root_eps[n] for n in names}
            else:
                values = {}
                for n in names:
                    if cfg.bundle_fresh or n not in self._latest:
                        values[n] = self._draw_root(n, cfg.epsilon)
                    else:
                        values[n] = self._latest[n]
                used = {n: cfg.epsilon for n in names}
            result = dict(values)
        else:
            raise RequestError(f"unsupported request {request!r}")
        self.release_log.append(Release(self.turns_used + 1, request, values, cfg.method, used))
        return result

    def transcript(self) -> list[dict]:
        return [r.to_record() for r in self.release_log]

    def transcript_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.transcript())


def initialize(config: SanitizerConfig, template: Template, true_roots, patient: int = 0) -> Sanitizer:
    return Sanitizer(config, template, true_roots, patient)


def answer(state: Sanitizer, request: Request):
    return state.answer(request)
