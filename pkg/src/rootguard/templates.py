"""The eight clinical diagnostic templates.

A template bundles its private roots, the public target formula ``g`` with
hand-derived partial derivatives, the derived intermediate nodes a service may
ask for, and the risk-class thresholds applied to ``g``.

Root bounds and population statistics ship in ``data/templates.json`` as
placeholders; :meth:`Template.with_stats` swaps in values measured from a
real population.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DomainError, EvaluationError
from .mechanisms import Grid

LN10 = math.log(10.0)


@dataclass(frozen=True)
class RootSpec:
    name: str
    lower: float
    upper: float
    pop_mean: float
    pop_std: float
    category: str = "II"
    unit: str = ""

    def __post_init__(self):
        if self.category not in ("I", "II"):
            raise ValueError(f"root category must be 'I' or 'II', got {self.category!r}")
        if not self.lower < self.upper:
            raise ValueError(f"root {self.name}: need lower < upper, got [{self.lower}, {self.upper}]")
        if not self.lower <= self.pop_mean <= self.upper:
            raise ValueError(f"root {self.name}: mean {self.pop_mean} outside [{self.lower}, {self.upper}]")
        if not self.pop_std > 0:
            raise ValueError(f"root {self.name}: std must be positive")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def grid(self, m: int) -> Grid:
        return Grid(self.lower, self.upper, m)


@dataclass(frozen=True)
class Threshold:
    """A class boundary; ``equal_goes_up`` says whether ``y == value`` belongs to the upper class."""

    value: float
    equal_goes_up: bool


@dataclass(frozen=True)
class RiskClass:
    index: int
    label: str


@dataclass(frozen=True)
class DerivedNode:
    """A deterministic node ``name = func(*parents)``; parents are roots or other derived nodes."""

    name: str
    parents: tuple[str, ...]
    func: Callable[..., float] = field(compare=False)

    def __call__(self, *args: float) -> float:
        return self.func(*args)


def _nonzero(value: float, root: str, what: str = "division") -> float:
    if value == 0:
        raise EvaluationError(f"{what} by zero: {root} = 0", root=root)
    return value


def _positive(value: float, root: str, what: str) -> float:
    if not value > 0:
        raise EvaluationError(f"{what} needs {root} > 0, got {value}", root=root)
    return value


# --------------------------------------------------------------------------
# target formulas and their analytic partials


def _mchc(hb, hct, rbc):
    return 100.0 * hb / _nonzero(hct, "Hct")


def _mchc_grad(hb, hct, rbc):
    _nonzero(hct, "Hct")
    return (100.0 / hct, -100.0 * hb / hct**2, 0.0)


def _fib4(age, ast, plt, alt):
    _nonzero(plt, "PLT")
    _positive(alt, "ALT", "square root")
    return age * ast / (plt * math.sqrt(alt))


def _fib4_grad(age, ast, plt, alt):
    g = _fib4(age, ast, plt, alt)
    denom = plt * math.sqrt(alt)
    return (ast / denom, age / denom, -g / plt, -g / (2.0 * alt))


def _aip(tg, hdl, tc):
    _nonzero(hdl, "HDL")
    ratio = tg / hdl
    if not ratio > 0:
        raise EvaluationError(f"log10 needs TG/HDL > 0, got {ratio}", root="TG")
    return math.log10(ratio)


def _aip_grad(tg, hdl, tc):
    _aip(tg, hdl, tc)
    return (1.0 / (tg * LN10), -1.0 / (hdl * LN10), 0.0)


def _conicity(waist, weight, height):
    _nonzero(height, "height")
    _positive(weight / height, "weight", "square root")
    return waist / (0.109 * math.sqrt(weight / height))


def _conicity_grad(waist, weight, height):
    g = _conicity(waist, weight, height)
    d_waist = 1.0 / (0.109 * math.sqrt(weight / height))
    return (d_waist, -g / (2.0 * weight), g / (2.0 * height))


def _ppi(sbp, dbp):
    return (sbp - dbp) / _nonzero(sbp, "SBP")


def _ppi_grad(sbp, dbp):
    _nonzero(sbp, "SBP")
    return (dbp / sbp**2, -1.0 / sbp)


def _tyg(tg, glu):
    prod = tg * glu
    if not prod > 0:
        raise EvaluationError(f"ln needs TG*Glu > 0, got {prod}", root="TG" if tg <= 0 else "Glu")
    return math.log(prod / 2.0)


def _tyg_grad(tg, glu):
    _tyg(tg, glu)
    return (1.0 / tg, 1.0 / glu)


def _homa(glu, ins):
    return glu * ins / 405.0


def _homa_grad(glu, ins):
    return (ins / 405.0, glu / 405.0)


def _nlr(neu, lym):
    return neu / _nonzero(lym, "Lym")


def _nlr_grad(neu, lym):
    _nonzero(lym, "Lym")
    return (1.0 / lym, -neu / lym**2)


_FORMULAS: dict[str, tuple[Callable, Callable]] = {
    "ANEMIA": (_mchc, _mchc_grad),
    "FIB4": (_fib4, _fib4_grad),
    "AIP": (_aip, _aip_grad),
    "CONICITY": (_conicity, _conicity_grad),
    "VASCULAR": (_ppi, _ppi_grad),
    "TYG": (_tyg, _tyg_grad),
    "HOMA": (_homa, _homa_grad),
    "NLR": (_nlr, _nlr_grad),
}


# intermediate nodes a service may request; each takes its parents positionally
def mcv(hct, rbc):
    return 10.0 * hct / _nonzero(rbc, "RBC")


def mch(hb, rbc):
    return 10.0 * hb / _nonzero(rbc, "RBC")


def non_hdl(tc, hdl):
    return tc - hdl


def friedewald_ldl(tc, hdl, tg):
    return tc - hdl - tg / 5.0


def bmi(weight, height):
    return weight / _nonzero(height, "height") ** 2


def waist_to_height(waist, height):
    return waist / _nonzero(height, "height")


def pulse_pressure(sbp, dbp):
    return sbp - dbp


def mean_arterial_pressure(dbp, pp):
    return dbp + pp / 3.0


def mid_blood_pressure(sbp, dbp):
    return (sbp + dbp) / 2.0


def nlr_sum(neu, lym):
    return neu + lym


def nlr_diff(neu, lym):
    return abs(neu - lym)


_DERIVED: dict[str, list[DerivedNode]] = {
    "ANEMIA": [DerivedNode("MCV", ("Hct", "RBC"), mcv), DerivedNode("MCH", ("Hb", "RBC"), mch)],
    "AIP": [DerivedNode("nonHDL", ("TC", "HDL"), non_hdl), DerivedNode("LDL", ("TC", "HDL", "TG"), friedewald_ldl)],
    "CONICITY": [
        DerivedNode("BMI", ("weight", "height"), bmi),
        DerivedNode("WHtR", ("waist", "height"), waist_to_height),
    ],
    "VASCULAR": [
        DerivedNode("PP", ("SBP", "DBP"), pulse_pressure),
        DerivedNode("MAP", ("DBP", "PP"), mean_arterial_pressure),
        DerivedNode("MBP", ("SBP", "DBP"), mid_blood_pressure),
    ],
    "NLR": [DerivedNode("NLR_sum", ("Neu", "Lym"), nlr_sum), DerivedNode("NLR_diff", ("Neu", "Lym"), nlr_diff)],
}


# --------------------------------------------------------------------------
# template


@dataclass(frozen=True)
class Template:
    name: str
    target_name: str
    roots: tuple[RootSpec, ...]
    thresholds: tuple[Threshold, ...]
    labels: tuple[str, ...]
    formula: Callable[..., float] = field(compare=False, repr=False)
    gradient: Callable[..., Sequence[float]] = field(compare=False, repr=False)
    derived: tuple[DerivedNode, ...] = ()
    # Level-1 knowledge: roots that are deterministic functions of other roots
    dependencies: tuple[DerivedNode, ...] = ()
    m: int = 1000

    def __post_init__(self):
        values = [th.value for th in self.thresholds]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"{self.name}: thresholds must be strictly ascending")
        if len(self.labels) != len(self.thresholds) + 1:
            raise ValueError(f"{self.name}: need one label per class")
        names = self.root_names
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: duplicate root names")
        for dep in self.dependencies:
            if dep.name not in names or any(p not in names or p == dep.name for p in dep.parents):
                raise ValueError(f"{self.name}: bad root dependency {dep.name}")

    @property
    def k(self) -> int:
        return len(self.roots)

    @property
    def root_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.roots)

    @property
    def independent_roots(self) -> tuple[str, ...]:
        dependent = {d.name for d in self.dependencies}
        return tuple(n for n in self.root_names if n not in dependent)

    @property
    def class_count(self) -> int:
        return len(self.thresholds) + 1

    def root(self, name: str) -> RootSpec:
        for r in self.roots:
            if r.name == name:
                return r
        raise KeyError(f"{self.name} has no root {name!r}")

    def root_index(self, name: str) -> int:
        return self.root_names.index(name)

    def grids(self) -> dict[str, Grid]:
        return {r.name: r.grid(self.m) for r in self.roots}

    @property
    def means(self) -> np.ndarray:
        return np.array([r.pop_mean for r in self.roots])

    @property
    def target_node(self) -> DerivedNode:
        return DerivedNode(self.target_name, self.root_names, self.formula)

    def nodes(self) -> dict[str, DerivedNode]:
        """All derived nodes by name, including the target."""
        out = {d.name: d for d in self.derived}
        out[self.target_name] = self.target_node
        return out

    @property
    def target_grid(self) -> Grid:
        lo, hi = function_range(self.formula, [(r.lower, r.upper) for r in self.roots])
        return Grid(lo, hi, self.m)

    def with_stats(self, bounds: Mapping[str, tuple[float, float]], means: Mapping[str, float] | None = None,
                   stds: Mapping[str, float] | None = None) -> "Template":
        """Copy with per-root bounds (and optionally means/stds) replaced."""
        roots = []
        for r in self.roots:
            lo, hi = bounds.get(r.name, (r.lower, r.upper))
            mu = means.get(r.name, r.pop_mean) if means else r.pop_mean
            sd = stds.get(r.name, r.pop_std) if stds else r.pop_std
            roots.append(replace(r, lower=float(lo), upper=float(hi), pop_mean=float(min(max(mu, lo), hi)),
                                 pop_std=float(sd)))
        return replace(self, roots=tuple(roots))

    def with_grid_size(self, m: int) -> "Template":
        return replace(self, m=int(m))


def function_range(func: Callable[..., float], box: Sequence[tuple[float, float]], n_interior: int = 512,
                   seed: int = 20240601) -> tuple[float, float]:
    """Range of ``func`` over a box: exact for coordinate-wise monotone functions, sampled otherwise."""
    points = list(itertools.product(*box))
    rng = np.random.default_rng(seed)
    lows = np.array([b[0] for b in box])
    highs = np.array([b[1] for b in box])
    points.extend(map(tuple, lows + (highs - lows) * rng.random((n_interior, len(box)))))
    vals = []
    for p in points:
        try:
            v = func(*p)
        except (EvaluationError, ZeroDivisionError, ValueError):
            continue
        if math.isfinite(v):
            vals.append(v)
    if not vals:
        raise EvaluationError("function undefined everywhere on the box")
    lo, hi = min(vals), max(vals)
    if hi <= lo:
        pad = max(abs(lo), 1.0) * 1e-6
        lo, hi = lo - pad, hi + pad
    return lo, hi


def _values(template: Template, x) -> tuple[float, ...]:
    if isinstance(x, Mapping):
        try:
            x = [x[n] for n in template.root_names]
        except KeyError as exc:
            raise DomainError(f"{template.name}: missing root {exc.args[0]!r}") from None
    vals = tuple(float(v) for v in x)
    if len(vals) != template.k:
        raise DomainError(f"{template.name} expects {template.k} roots, got {len(vals)}")
    return vals


def _check_bounds(template: Template, vals: Sequence[float]) -> None:
    for r, v in zip(template.roots, vals):
        if not math.isfinite(v):
            raise EvaluationError(f"{r.name} is not finite: {v}", root=r.name)
        if not r.grid(template.m).contains(v):
            raise DomainError(f"{r.name}={v} outside [{r.lower}, {r.upper}]", value=v, bounds=(r.lower, r.upper))


def evaluate_target(template: Template, x, check_bounds: bool = True) -> float:
    """Value of the template's target formula at root values ``x`` (sequence or mapping)."""
    vals = _values(template, x)
    if check_bounds:
        _check_bounds(template, vals)
    return float(template.formula(*vals))


def target_gradient(template: Template, x, check_bounds: bool = True) -> np.ndarray:
    vals = _values(template, x)
    if check_bounds:
        _check_bounds(template, vals)
    return np.asarray(template.gradient(*vals), dtype=float)


def classify_index(template: Template, y: float) -> int:
    if not math.isfinite(y):
        raise EvaluationError(f"cannot classify non-finite target {y}")
    idx = 0
    for th in template.thresholds:
        if y > th.value or (th.equal_goes_up and y == th.value):
            idx += 1
    return idx


def classify(template: Template, y: float) -> RiskClass:
    idx = classify_index(template, y)
    return RiskClass(idx, template.labels[idx])


# --------------------------------------------------------------------------
# registry


TEMPLATE_NAMES = ("ANEMIA", "FIB4", "AIP", "CONICITY", "VASCULAR", "TYG", "HOMA", "NLR")


def _load_data() -> dict:
    text = resources.files("rootguard").joinpath("data/templates.json").read_text(encoding="utf-8")
    return json.loads(text)


def template_from_dict(entry: Mapping, m: int = 1000) -> Template:
    """Build a template from a data-file entry; formulas are looked up by template name."""
    name = entry["name"].upper()
    if name not in _FORMULAS:
        raise KeyError(f"no formula registered for template {name!r}")
    formula, gradient = _FORMULAS[name]
    roots = tuple(
        RootSpec(
            name=r["name"], lower=float(r["lower"]), upper=float(r["upper"]), pop_mean=float(r["mean"]),
            pop_std=float(r["std"]), category=r.get("category", "II"), unit=r.get("unit", ""),
        )
        for r in entry["roots"]
    )
    thresholds = tuple(Threshold(float(t["value"]), bool(t["equal_goes_up"])) for t in entry["thresholds"])
    return Template(
        name=name, target_name=entry.get("target", name), roots=roots, thresholds=thresholds,
        labels=tuple(entry["labels"]), formula=formula, gradient=gradient,
        derived=tuple(_DERIVED.get(name, ())), m=int(entry.get("m", m)),
    )


@lru_cache(maxsize=None)
def _registry() -> dict[str, Template]:
    data = _load_data()
    m = int(data.get("m", 1000))
    return {e["name"].upper(): template_from_dict(e, m) for e in data["templates"]}


def get_template(name: str) -> Template:
    try:
        return _registry()[name.upper()]
    except KeyError:
        raise KeyError(f"unknown template {name!r}; choose from {', '.join(TEMPLATE_NAMES)}") from None


def all_templates() -> list[Template]:
    return [get_template(n) for n in TEMPLATE_NAMES]
