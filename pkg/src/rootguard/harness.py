"""Session runner, metrics and experiment sweeps.

Three experiments are supported:

``RQ1``  utility of the released target over a grid of epsilons and turn budgets;
``RQ2``  MAP reconstruction of the roots under query strategies A and B;
``RQ3``  dumps of M-Opt allocations for the power-law analysis.

Sweeps are deterministic: every noise draw comes from a stream keyed by the
seed, template, patient, node and draw index, so the number of worker threads
never changes the output.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .adversary import (
    AttackPlan, Observations, Prior, Strategy, build_plan, collapse_for, map_estimate,
)
from .allocator import Allocation, allocate, budget_multiplier, compute_sensitivities, uniform_allocation
from .controller import Method, Release, RootRequest, SanitizerConfig, Sanitizer, TargetBundle
from .errors import ConfigError, MetricError, ProtocolError
from .mechanisms import MechanismKind
from .population import Patient, Population, load_population
from .rng import AUX_TAG, stream
from .templates import TEMPLATE_NAMES, Template, classify_index, evaluate_target, get_template

BOOTSTRAP_RESAMPLES = 1000
MULTIPLIERS = ("k+1", "2k+1", "3k+1")
DEFAULT_EPSILONS = (0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0)


# --------------------------------------------------------------------------
# metrics


def wmape(truths: Sequence[float], estimates: Sequence[float]) -> float:
    """Sum of absolute errors over sum of absolute truths, in percent."""
    y = np.asarray(truths, dtype=float)
    yhat = np.asarray(estimates, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError("truths and estimates must have equal length")
    denom = np.abs(y).sum()
    if denom == 0:
        raise MetricError("sum of absolute ground truths is zero")
    return float(np.abs(yhat - y).sum() / denom * 100.0)


def risk_class_error(truths: Sequence[float], estimates: Sequence[float], template: Template) -> float:
    """Mean ordinal class distance normalised by ``C - 1``, in percent."""
    if len(truths) != len(estimates):
        raise ValueError("truths and estimates must have equal length")
    if not len(truths):
        raise MetricError("no patients")
    ct = np.array([classify_index(template, y) for y in truths])
    ce = np.array([classify_index(template, y) for y in estimates])
    return float(np.mean(np.abs(ct - ce)) / (template.class_count - 1) * 100.0)


def bootstrap_se(statistic, n: int, rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    """Bootstrap standard error of ``statistic(indices)`` over ``n`` patients.

    ``statistic`` receives a ``(resamples, n)`` index array and returns one value per row.
    """
    idx = rng.integers(0, n, size=(resamples, n))
    vals = np.asarray(statistic(idx), dtype=float)
    return float(vals.std(ddof=1)) if resamples > 1 else 0.0


def _wmape_rows(abs_err: np.ndarray, abs_truth: np.ndarray):
    def stat(idx):
        return abs_err[idx].sum(axis=1) / abs_truth[idx].sum(axis=1) * 100.0

    return stat


def paired_increase_bound(err_a: np.ndarray, err_b: np.ndarray, abs_truth: np.ndarray, rng: np.random.Generator,
                          level: float = 0.95, resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    """Lower one-sided bootstrap bound on ``wMAPE(b) - wMAPE(a)`` with patients resampled jointly."""
    idx = rng.integers(0, len(abs_truth), size=(resamples, len(abs_truth)))
    den = abs_truth[idx].sum(axis=1)
    diff = (err_b[idx].sum(axis=1) - err_a[idx].sum(axis=1)) / den * 100.0
    return float(np.quantile(diff, 1.0 - level))


def aggregate(values: Sequence[float], ses: Sequence[float]) -> tuple[float, float]:
    """Unweighted mean across templates with SE ``sqrt(sum SE^2) / n``."""
    v = np.asarray(values, dtype=float)
    s = np.asarray(ses, dtype=float)
    if not v.size:
        raise MetricError("nothing to aggregate")
    return float(v.mean()), float(math.sqrt(float((s**2).sum())) / v.size)


# --------------------------------------------------------------------------
# sessions


@lru_cache(maxsize=512)
def _allocation(template: Template, method: Method, mechanism: MechanismKind, budget: float) -> Allocation | None:
    if method is Method.ALL:
        return None
    if method is Method.ROOTS:
        return uniform_allocation(budget, template.independent_roots)
    return allocate(template, budget, mechanism)


def opt_allocation(template: Template, mechanism, budget: float) -> Allocation:
    return _allocation(template, Method.OPT, MechanismKind.parse(mechanism), float(budget))


def make_config(template: Template, method, mechanism, epsilon: float, turns: int, budget: float | None = None,
                seed: int = 0, bundle_fresh: bool = True) -> SanitizerConfig:
    """Config with the allocation for cached methods; ``budget`` defaults to ``turns * epsilon``."""
    method = Method.parse(method)
    mechanism = MechanismKind.parse(mechanism)
    budget = turns * epsilon if budget is None else budget
    alloc = _allocation(template, method, mechanism, float(budget))
    return SanitizerConfig(method, mechanism, float(epsilon), int(turns), alloc, int(seed), bundle_fresh)


def utility_plan(template: Template, turns: int) -> tuple:
    """``turns - 1`` round-robin root queries, then the target bundle."""
    roots = template.root_names
    return tuple(RootRequest(roots[i % len(roots)]) for i in range(turns - 1)) + (TargetBundle(),)


@dataclass
class SessionResult:
    transcript: list[Release]
    target_true: float
    target_released: float
    bundle: dict[str, float]
    estimates: dict[str, dict[str, Any]] = field(default_factory=dict)
    observations: Observations | None = None
    noise_draws: int = 0

    def first_release(self, root: str) -> float | None:
        for rel in self.transcript:
            if root in rel.values:
                return rel.values[root]
        return None


def run_session(template: Template, patient: Patient, config: SanitizerConfig, plan: AttackPlan | Sequence,
                priors: Mapping[str, Prior] | None = None) -> SessionResult:
    """Play ``plan`` against a fresh sanitizer.

    The released target is ``g`` evaluated on the bundle turn's values.  When
    ``priors`` is given, each named prior yields one set of MAP estimates.
    """
    schedule = plan.schedule if isinstance(plan, AttackPlan) else tuple(plan)
    if len(schedule) != config.turns:
        raise ProtocolError(f"plan has {len(schedule)} turns but the session allows {config.turns}")
    san = Sanitizer(config, template, patient.vector(template.root_names), patient.id)
    bundle: dict[str, float] = {}
    for req in schedule:
        out = san.answer(req)
        if isinstance(req, TargetBundle):
            bundle = out
    if not bundle:
        raise ProtocolError("plan never requested the target bundle")
    target_released = evaluate_target(template, bundle, check_bounds=False)
    result = SessionResult(
        transcript=list(san.release_log),
        target_true=evaluate_target(template, patient.values),
        target_released=target_released,
        bundle=bundle,
        noise_draws=san.noise_draws,
    )
    if priors:
        obs = Observations.from_releases(san.release_log, template.root_names)
        grids = template.grids()
        collapse = collapse_for(config.method)
        result.observations = obs
        for name, prior in priors.items():
            est = map_estimate(obs, config.mechanism, grids, prior, template.root_names, collapse)
            result.estimates[name] = {r: e for r, e in est.items()}
    return result


# --------------------------------------------------------------------------
# sweeps


class Experiment(str, enum.Enum):
    RQ1 = "RQ1"
    RQ2 = "RQ2"
    RQ3 = "RQ3"

    @classmethod
    def parse(cls, value) -> "Experiment":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().upper())


@dataclass
class SweepSpec:
    experiment: Experiment
    templates: list[str] = field(default_factory=lambda: list(TEMPLATE_NAMES))
    mechanisms: list[str] = field(default_factory=lambda: ["exponential"])
    methods: list[str] = field(default_factory=lambda: ["M-All", "M-Roots", "M-Opt"])
    epsilons: list[float] = field(default_factory=lambda: list(DEFAULT_EPSILONS))
    budget_multipliers: list[str] = field(default_factory=lambda: list(MULTIPLIERS))
    eps_r: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.5])
    q: list[int] = field(default_factory=lambda: [1, 4, 8, 16])
    priors: list[str] = field(default_factory=lambda: ["uniform", "informed"])
    strategies: list[str] = field(default_factory=lambda: ["A", "B"])
    n_patients: int = 200
    seed: int = 0
    bundle_fresh: bool = True
    population: str | None = None

    def __post_init__(self):
        self.experiment = Experiment.parse(self.experiment)
        self.templates = [t.upper() for t in self.templates]
        self.mechanisms = [MechanismKind.parse(m).value for m in self.mechanisms]
        self.methods = [Method.parse(m).value for m in self.methods]
        self.priors = [p.lower() for p in self.priors]
        self.strategies = [Strategy.parse(s).value for s in self.strategies]
        if not self.templates:
            raise ConfigError("sweep needs at least one template")
        unknown = [t for t in self.templates if t not in TEMPLATE_NAMES]
        if unknown:
            raise ConfigError(f"unknown templates {unknown}; choose from {', '.join(TEMPLATE_NAMES)}")
        if not self.mechanisms:
            raise ConfigError("sweep needs at least one mechanism")
        if self.experiment is Experiment.RQ1:
            required = {"methods": self.methods, "epsilons": self.epsilons, "budget_multipliers": self.budget_multipliers}
        elif self.experiment is Experiment.RQ2:
            required = {"methods": self.methods, "eps_r": self.eps_r, "q": self.q, "priors": self.priors,
                        "strategies": self.strategies}
        else:
            required = {"epsilons": self.epsilons, "budget_multipliers": self.budget_multipliers}
        empty = [k for k, v in required.items() if not v]
        if empty:
            raise ConfigError(f"{self.experiment.value} sweep has empty axes: {', '.join(empty)}")
        if self.n_patients < 1:
            raise ConfigError("n_patients must be positive")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SweepSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep keys: {', '.join(sorted(unknown))}")
        return cls(**dict(data))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["experiment"] = self.experiment.value
        return d

    def iter_cells(self) -> Iterator["Cell"]:
        if self.experiment is Experiment.RQ1:
            for t, mech, meth, mult, eps in itertools.product(
                    self.templates, self.mechanisms, self.methods, self.budget_multipliers, self.epsilons):
                yield Cell(t, mech, meth, float(eps), str(mult))
        elif self.experiment is Experiment.RQ2:
            # one cell per transcript; both priors are scored on the same sessions
            for t, mech, meth, strat, eps, q in itertools.product(
                    self.templates, self.mechanisms, self.methods, self.strategies, self.eps_r, self.q):
                yield Cell(t, mech, meth, float(eps), strategy=strat, q=int(q))
        else:
            for t, mech, mult, eps in itertools.product(
                    self.templates, self.mechanisms, self.budget_multipliers, self.epsilons):
                yield Cell(t, mech, Method.OPT.value, float(eps), str(mult))


@dataclass(frozen=True)
class Cell:
    template: str
    mechanism: str
    method: str
    epsilon: float
    multiplier: str | None = None
    strategy: str | None = None
    q: int | None = None

    def key(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


RQ1_COLUMNS = ("template", "mechanism", "method", "epsilon", "multiplier", "turns", "budget", "patient",
               "target_true", "target_released", "risk_true", "risk_released", "status")
RQ2_COLUMNS = ("template", "mechanism", "method", "strategy", "eps_r", "q", "prior", "patient", "root", "truth",
               "estimate", "n_obs", "identifiable", "targeted", "first_release", "status")
RQ3_COLUMNS = ("template", "mechanism", "epsilon", "multiplier", "budget", "root", "h", "width", "delta", "eps_i",
               "clamped")


def _patients(pop: Population, n: int) -> Sequence[Patient]:
    return pop.test[:n]


def _rq1_cell(cell: Cell, pop: Population, spec: SweepSpec) -> list[dict]:
    template = pop.calibrated_template()
    turns = budget_multiplier(cell.multiplier, template.k)
    cfg = make_config(template, cell.method, cell.mechanism, cell.epsilon, turns, seed=spec.seed,
                      bundle_fresh=spec.bundle_fresh)
    plan = utility_plan(template, turns)
    rows = []
    for p in _patients(pop, spec.n_patients):
        res = run_session(template, p, cfg, plan)
        rows.append({
            "template": cell.template, "mechanism": cell.mechanism, "method": cell.method,
            "epsilon": cell.epsilon, "multiplier": cell.multiplier, "turns": turns, "budget": cfg.budget,
            "patient": p.id, "target_true": res.target_true, "target_released": res.target_released,
            "risk_true": classify_index(template, res.target_true),
            "risk_released": classify_index(template, res.target_released), "status": "ok",
        })
    return rows


def _priors_for(pop: Population, names: Sequence[str]) -> dict[str, Prior]:
    out = {}
    for name in names:
        if name == "uniform":
            out[name] = Prior.uniform()
        elif name == "informed":
            ref = pop.reference
            out[name] = Prior.informed(ref.means(), ref.stds())
        else:
            raise ConfigError(f"unknown prior {name!r}")
    return out


def _rq2_cell(cell: Cell, pop: Population, spec: SweepSpec) -> list[dict]:
    template = pop.calibrated_template()
    budget = template.k * cell.epsilon
    turns = cell.q + 1
    cfg = make_config(template, cell.method, cell.mechanism, cell.epsilon, turns, budget=budget, seed=spec.seed)
    plan = build_plan(cell.strategy, cell.q, opt_allocation(template, cell.mechanism, budget), template)
    priors = _priors_for(pop, spec.priors)
    rows = []
    for p in _patients(pop, spec.n_patients):
        res = run_session(template, p, cfg, plan, priors)
        for prior_name in spec.priors:
            for r in template.root_names:
                est = res.estimates[prior_name][r]
                rows.append({
                    "template": cell.template, "mechanism": cell.mechanism, "method": cell.method,
                    "strategy": cell.strategy, "eps_r": cell.epsilon, "q": cell.q, "prior": prior_name,
                    "patient": p.id, "root": r, "truth": p.values[r], "estimate": est.value,
                    "n_obs": res.observations.count(r), "identifiable": int(est.identifiable),
                    "targeted": int(r == plan.target_root), "first_release": res.first_release(r), "status": "ok",
                })
    return rows


def _rq3_cell(cell: Cell, pop: Population, spec: SweepSpec) -> list[dict]:
    template = pop.calibrated_template()
    turns = budget_multiplier(cell.multiplier, template.k)
    budget = turns * cell.epsilon
    alloc = opt_allocation(template, cell.mechanism, budget)
    prof = compute_sensitivities(template, roots=template.independent_roots)
    return [{
        "template": cell.template, "mechanism": cell.mechanism, "epsilon": cell.epsilon,
        "multiplier": cell.multiplier, "budget": budget, "root": r, "h": prof.h[r], "width": prof.widths[r],
        "delta": prof.delta[r], "eps_i": alloc[r], "clamped": int(r in alloc.clamped),
    } for r in alloc.roots]


_RUNNERS = {Experiment.RQ1: (_rq1_cell, RQ1_COLUMNS), Experiment.RQ2: (_rq2_cell, RQ2_COLUMNS),
            Experiment.RQ3: (_rq3_cell, RQ3_COLUMNS)}


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[dict]
    failures: list[dict]
    summary: dict
    columns: tuple[str, ...]

    def csv_text(self) -> str:
        return rows_to_csv(self.rows, self.columns)


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_format(row.get(c)) for c in columns])
    return buf.getvalue()


def load_populations(spec: SweepSpec) -> dict[str, Population]:
    return {name: load_population(get_template(name), spec.population, max(spec.n_patients, 2), spec.seed)
            for name in spec.templates}


def run_sweep(spec: SweepSpec, populations: Mapping[str, Population] | None = None, out_dir: str | Path | None = None,
              workers: int = 1) -> SweepResult:
    """Run every cell of ``spec``.  A failing cell leaves one marker row and the rest continue."""
    runner, columns = _RUNNERS[spec.experiment]
    populations = load_populations(spec) if populations is None else populations
    cells = list(spec.iter_cells())

    def work(cell: Cell):
        try:
            return runner(cell, populations[cell.template], spec), None
        except Exception as exc:  # noqa: BLE001 -- a failing cell must not abort the sweep
            marker = dict(cell.key())
            if spec.experiment is Experiment.RQ2:
                marker["eps_r"] = marker.pop("epsilon")
            marker["status"] = f"error: {type(exc).__name__}: {exc}"
            return [marker], marker

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(work, cells))
    else:
        outputs = [work(c) for c in cells]
    rows = [r for out, _ in outputs for r in out]
    failures = [f for _, f in outputs if f is not None]
    summary = summarize(rows, spec)
    summary["failed_cells"] = failures
    result = SweepResult(spec, rows, failures, summary, columns)
    if out_dir is not None:
        write_results(result, out_dir)
    return result


def write_results(result: SweepResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = result.spec.experiment.value.lower()
    (out / f"{tag}_rows.csv").write_text(result.csv_text(), encoding="utf-8")
    (out / f"{tag}_summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True, default=float),
                                             encoding="utf-8")
    if result.spec.experiment is Experiment.RQ3:
        allocs: dict[str, dict] = {}
        for r in result.rows:
            if "root" not in r:
                continue
            key = _cell_label((r["template"], r["mechanism"], r["epsilon"], r["multiplier"]))
            entry = allocs.setdefault(key, {"budget": r["budget"], "per_root": {}, "clamped": []})
            entry["per_root"][r["root"]] = r["eps_i"]
            if r["clamped"]:
                entry["clamped"].append(r["root"])
        (out / "rq3_allocations.json").write_text(json.dumps(allocs, indent=2, sort_keys=True), encoding="utf-8")
    (out / f"{tag}_spec.json").write_text(json.dumps(result.spec.to_dict(), indent=2, sort_keys=True),
                                          encoding="utf-8")


# --------------------------------------------------------------------------
# summaries


def _bootstrap_rng(seed: int, *key) -> np.random.Generator:
    return stream(seed, AUX_TAG, "bootstrap", *key)


def _ok(rows: Iterable[dict]) -> list[dict]:
    return [r for r in rows if r.get("status", "ok") == "ok"]


def _cell_label(parts: Sequence) -> str:
    return "|".join(str(p) for p in parts)


def summarize_rq1(rows: Sequence[dict], spec: SweepSpec) -> dict:
    groups: dict[tuple, dict[str, list[dict]]] = {}
    for r in _ok(rows):
        key = (r["mechanism"], r["method"], r["epsilon"], r["multiplier"])
        groups.setdefault(key, {}).setdefault(r["template"], []).append(r)
    cells = []
    for key in itertools.product(spec.mechanisms, spec.methods, [float(e) for e in spec.epsilons],
                                 [str(m) for m in spec.budget_multipliers]):
        per_t = groups.get(key, {})
        entry = {"mechanism": key[0], "method": key[1], "epsilon": key[2], "multiplier": key[3], "templates": {}}
        missing = [t for t in spec.templates if t not in per_t]
        for t in spec.templates:
            if t not in per_t:
                continue
            trs = per_t[t]
            template = get_template(t)
            y = np.array([r["target_true"] for r in trs])
            yhat = np.array([r["target_released"] for r in trs])
            ct = np.array([r["risk_true"] for r in trs])
            ce = np.array([r["risk_released"] for r in trs])
            abs_err, abs_y = np.abs(yhat - y), np.abs(y)
            rce_vec = np.abs(ct - ce) / (template.class_count - 1) * 100.0
            rng = _bootstrap_rng(spec.seed, t, *map(str, key))
            entry["templates"][t] = {
                "n": len(trs),
                "wmape": wmape(y, yhat),
                "wmape_se": bootstrap_se(_wmape_rows(abs_err, abs_y), len(trs), rng),
                "rce": float(rce_vec.mean()),
                "rce_se": bootstrap_se(lambda idx: rce_vec[idx].mean(axis=1), len(trs), rng),
                "budget": trs[0]["budget"],
            }
        present = entry["templates"].values()
        if present:
            entry["wmape"], entry["wmape_se"] = aggregate([v["wmape"] for v in present], [v["wmape_se"] for v in present])
            entry["rce"], entry["rce_se"] = aggregate([v["rce"] for v in present], [v["rce_se"] for v in present])
            entry["mean_budget"] = float(np.mean([v["budget"] for v in present]))
        entry["missing_templates"] = missing
        cells.append(entry)
    return {"experiment": "RQ1", "cells": cells}


def _root_tables(trs: Sequence[dict], roots: Sequence[str]):
    """Per-patient arrays ``(abs_err, abs_truth)`` with one column per root."""
    by_patient: dict[int, dict[str, dict]] = {}
    for r in trs:
        by_patient.setdefault(r["patient"], {})[r["root"]] = r
    pids = sorted(by_patient)
    err = np.array([[abs(by_patient[p][n]["estimate"] - by_patient[p][n]["truth"]) for n in roots] for p in pids])
    tru = np.array([[abs(by_patient[p][n]["truth"]) for n in roots] for p in pids])
    return pids, err, tru


def summarize_rq2(rows: Sequence[dict], spec: SweepSpec) -> dict:
    groups: dict[tuple, dict[str, list[dict]]] = {}
    for r in _ok(rows):
        key = (r["mechanism"], r["method"], r["strategy"], r["prior"], r["eps_r"], r["q"])
        groups.setdefault(key, {}).setdefault(r["template"], []).append(r)
    cells = []
    for key in itertools.product(spec.mechanisms, spec.methods, spec.strategies, spec.priors,
                                 [float(e) for e in spec.eps_r], [int(q) for q in spec.q]):
        per_t = groups.get(key, {})
        entry = {"mechanism": key[0], "method": key[1], "strategy": key[2], "prior": key[3], "eps_r": key[4],
                 "q": key[5], "templates": {}}
        for t in spec.templates:
            if t not in per_t:
                continue
            trs = per_t[t]
            roots = get_template(t).root_names
            targeted = {r["root"] for r in trs if r["targeted"]}
            _, err, tru = _root_tables(trs, roots)
            rng = _bootstrap_rng(spec.seed, t, *map(str, key))

            def all_roots(idx, err=err, tru=tru):
                return (err[idx].sum(axis=1) / tru[idx].sum(axis=1)).mean(axis=1) * 100.0

            per_root = err.sum(axis=0) / tru.sum(axis=0) * 100.0
            rec = {
                "n": err.shape[0],
                "per_root": dict(zip(roots, map(float, per_root))),
                "all_roots": float(per_root.mean()),
                "all_roots_se": bootstrap_se(all_roots, err.shape[0], rng),
            }
            if targeted:
                j = roots.index(next(iter(targeted)))
                rec["target_root"] = roots[j]
                rec["targeted_root"] = float(per_root[j])
                rec["targeted_root_se"] = bootstrap_se(_wmape_rows(err[:, j], tru[:, j]), err.shape[0], rng)
            entry["templates"][t] = rec
        present = list(entry["templates"].values())
        if present:
            entry["all_roots"], entry["all_roots_se"] = aggregate([v["all_roots"] for v in present],
                                                                  [v["all_roots_se"] for v in present])
            tr = [v for v in present if "targeted_root" in v]
            if tr:
                entry["targeted_root"], entry["targeted_root_se"] = aggregate(
                    [v["targeted_root"] for v in tr], [v["targeted_root_se"] for v in tr])
        entry["missing_templates"] = [t for t in spec.templates if t not in per_t]
        cells.append(entry)
    return {"experiment": "RQ2", "cells": cells}


def powerlaw_slope(rows: Sequence[dict]) -> float:
    """Slope of log budget share on log ``h * width``, with a per-template intercept.

    Clamped roots are left out: they sit on the floor, not on the curve.
    """
    xs, ys = [], []
    by_t: dict[tuple, list[dict]] = {}
    for r in rows:
        by_t.setdefault((r["template"], r["mechanism"], r["epsilon"], r["multiplier"]), []).append(r)
    for trs in by_t.values():
        active = [r for r in trs if not r["clamped"] and r["h"] > 0]
        if len(active) < 2:
            continue
        x = np.log([r["h"] * r["width"] for r in active])
        y = np.log([r["eps_i"] / r["budget"] for r in active])
        xs.extend(x - x.mean())
        ys.extend(y - y.mean())
    if len(xs) < 2:
        raise MetricError("not enough unclamped roots to fit a slope")
    xs, ys = np.asarray(xs), np.asarray(ys)
    return float((xs * ys).sum() / (xs * xs).sum())


def summarize_rq3(rows: Sequence[dict], spec: SweepSpec) -> dict:
    out = {"experiment": "RQ3", "slopes": []}
    for mech, eps, mult in itertools.product(spec.mechanisms, [float(e) for e in spec.epsilons],
                                             [str(m) for m in spec.budget_multipliers]):
        sel = [r for r in rows if r.get("mechanism") == mech and r.get("epsilon") == eps
               and r.get("multiplier") == mult and "root" in r]
        try:
            slope = powerlaw_slope(sel)
        except MetricError:
            slope = None
        out["slopes"].append({"mechanism": mech, "epsilon": eps, "multiplier": mult, "slope": slope})
    return out


def summarize(rows: Sequence[dict], spec: SweepSpec) -> dict:
    if spec.experiment is Experiment.RQ1:
        return summarize_rq1(rows, spec)
    if spec.experiment is Experiment.RQ2:
        return summarize_rq2(rows, spec)
    return summarize_rq3(rows, spec)


# --------------------------------------------------------------------------
# text tables


def render_table(summary: Mapping) -> str:
    """Aligned plain-text table of an RQ1, RQ2 or RQ3 summary."""
    exp = summary.get("experiment")
    if exp == "RQ1":
        head = ("mechanism", "method", "epsilon", "mult", "B_mean", "wMAPE", "SE", "RCE", "SE")
        body = [(c["mechanism"], c["method"], f"{c['epsilon']:g}", c["multiplier"], _num(c.get("mean_budget"), 3),
                 _num(c.get("wmape")), _num(c.get("wmape_se")), _num(c.get("rce")), _num(c.get("rce_se")))
                for c in summary["cells"]]
    elif exp == "RQ2":
        head = ("mechanism", "method", "strat", "prior", "eps_r", "q", "all-roots", "SE", "targeted", "SE")
        body = [(c["mechanism"], c["method"], c["strategy"], c["prior"], f"{c['eps_r']:g}", str(c["q"]),
                 _num(c.get("all_roots")), _num(c.get("all_roots_se")), _num(c.get("targeted_root")),
                 _num(c.get("targeted_root_se"))) for c in summary["cells"]]
    elif exp == "RQ3":
        head = ("mechanism", "epsilon", "mult", "slope")
        body = [(s["mechanism"], f"{s['epsilon']:g}", s["multiplier"], _num(s["slope"], 3)) for s in summary["slopes"]]
    else:
        raise ConfigError(f"not a sweep summary (experiment={exp!r})")
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths)), "  ".join("-" * w for w in widths)]
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in body]
    return "\n".join(lines) + "\n"


def _num(v, digits: int = 2) -> str:
    return "-" if v is None else f"{v:.{digits}f}"
