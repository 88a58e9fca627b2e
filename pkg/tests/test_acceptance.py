"""Acceptance checks.  Each test records one pass/fail line in the terminal summary."""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from rootguard.allocator import (
    SensitivityProfile, allocate, budget_multiplier, closed_form_allocation, compute_sensitivities,
)
from rootguard.harness import (
    Experiment, SweepSpec, risk_class_error, run_sweep, wmape,
)
from rootguard.mechanisms import NoiseParams, log_pmf_matrix, pmf_vector, sample_index
from rootguard.rng import stream
from rootguard.templates import TEMPLATE_NAMES, get_template

NHANES_ENV = "ROOTGUARD_NHANES_DIR"
MULTS = ["k+1", "2k+1", "3k+1"]
Q_LEVELS = [1, 4, 8, 16]


def _merged_chisquare(counts, expected, min_expected=5.0):
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(counts, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e:
        obs[-1] += acc_o
        exp[-1] += acc_e
    exp = np.asarray(exp)
    return chisquare(obs, exp * (sum(obs) / exp.sum())).pvalue


def test_01_ratio_property(criterion):
    rec = criterion(1, "mDP ratio bound, m=101")
    start = time.perf_counter()
    m = 101
    dist = np.abs(np.arange(m)[:, None] - np.arange(m)[None, :])
    worst = -np.inf
    for kind in ("exp", "blap"):
        for eps in (0.1, 0.5, 1.0):
            lp = log_pmf_matrix(NoiseParams(kind, eps), m)
            # lp[t, s]; compare every (t, t') pair at every s
            gap = lp[:, None, :] - lp[None, :, :]
            excess = gap - eps * dist[:, :, None]
            worst = max(worst, float(excess.max()))
            assert excess.max() <= 1e-9, (kind, eps)
    for eps in (0.1, 0.5, 1.0):
        lp = log_pmf_matrix(NoiseParams("staircase", eps), m)
        step = np.abs(lp[1:, :] - lp[:-1, :]).max()
        assert step <= eps + 1e-9
    elapsed = time.perf_counter() - start
    rec.detail = f"max excess {worst:.2e}, {elapsed:.2f}s"
    assert elapsed < 10


def test_02_sampler_matches_pmf(criterion):
    rec = criterion(2, "sampler vs PMF chi-square, 1e5 draws")
    start = time.perf_counter()
    m, t, n = 1000, 500, 100_000
    pvals = {}
    for kind in ("exp", "blap", "staircase"):
        for eps in (0.1, 1.0):
            p = NoiseParams(kind, eps)
            draws = sample_index(p, t, m, stream(77, "chi2", kind, int(eps * 10)), size=n)
            counts = np.bincount(draws, minlength=m)
            pvals[(kind, eps)] = _merged_chisquare(counts, pmf_vector(p, t, m) * n)
    elapsed = time.perf_counter() - start
    rec.detail = f"min p {min(pvals.values()):.4f}, {elapsed:.1f}s"
    assert min(pvals.values()) > 0.001
    assert elapsed < 30


def test_03_power_law_slope(criterion):
    rec = criterion(3, "power-law allocation slope 0.50 +/- 0.03")
    start = time.perf_counter()
    spec = SweepSpec(Experiment.RQ3, mechanisms=["exp", "blap", "staircase"], epsilons=[0.1],
                     budget_multipliers=["2k+1"])
    res = run_sweep(spec)
    slopes = {s["mechanism"]: s["slope"] for s in res.summary["slopes"]}
    elapsed = time.perf_counter() - start
    rec.detail = ", ".join(f"{k} {v:.4f}" for k, v in slopes.items()) + f", {elapsed:.1f}s"
    assert all(abs(v - 0.5) <= 0.03 for v in slopes.values())
    assert elapsed < 60


def test_04_zero_sensitivity_clamp(criterion):
    rec = criterion(4, "zero-sensitivity roots clamped at eps_min")
    notes = []
    for name, root in (("ANEMIA", "RBC"), ("AIP", "TC")):
        t = get_template(name)
        for mult in MULTS:
            budget = budget_multiplier(mult, t.k) * 0.1
            alloc = allocate(t, budget, "exp")
            assert alloc[root] == alloc.eps_min
            assert root in alloc.clamped
            assert abs(sum(alloc.per_root.values()) - budget) <= 1e-9
        notes.append(f"{name}.{root}={alloc[root]}")
    rec.detail = ", ".join(notes)


def test_05_closed_form_oracle(criterion):
    rec = criterion(5, "closed-form allocator oracle")
    two = closed_form_allocation(0.3, SensitivityProfile.from_weights({"a": 2.0, "b": 1.0}))
    assert two["a"] == pytest.approx(0.2, abs=1e-15) and two["b"] == pytest.approx(0.1, abs=1e-15)
    homa = get_template("HOMA")
    numeric = allocate(homa, 0.5, "exp")
    closed = closed_form_allocation(0.5, compute_sensitivities(homa))
    rel = {r: abs(numeric[r] - closed[r]) / closed[r] for r in homa.root_names}
    rec.detail = f"(2,1)->({two['a']:.3g}, {two['b']:.3g}); HOMA max rel diff {max(rel.values()):.4f}"
    assert max(rel.values()) <= 0.05


def _estimates(rows):
    return {(r["template"], r["method"], r["strategy"], r["prior"], r["patient"], r["root"]): r["estimate"]
            for r in rows}


def test_06_cache_invariance(criterion):
    rec = criterion(6, "cached estimates identical at q=1 and q=16")
    start = time.perf_counter()
    base = dict(methods=["M-Roots", "M-Opt"], eps_r=[0.1], n_patients=200)
    one = run_sweep(SweepSpec(Experiment.RQ2, q=[1], **base))
    many = run_sweep(SweepSpec(Experiment.RQ2, q=[16], **base))
    assert not one.failures and not many.failures
    a, b = _estimates(one.rows), _estimates(many.rows)
    assert a.keys() == b.keys()
    differing = sum(a[k] != b[k] for k in a)
    elapsed = time.perf_counter() - start
    rec.detail = f"{len(a)} estimates, {differing} differ, {elapsed:.1f}s"
    assert differing == 0
    assert elapsed < 60


def _all_roots_by_template(rows, q):
    """Per template: patient ids, |error| and |truth| matrices (patients x roots)."""
    out = {}
    for name in TEMPLATE_NAMES:
        sel = [r for r in rows if r["template"] == name and r["q"] == q]
        roots = get_template(name).root_names
        pids = sorted({r["patient"] for r in sel})
        cell = {(r["patient"], r["root"]): r for r in sel}
        err = np.array([[abs(cell[p, n]["estimate"] - cell[p, n]["truth"]) for n in roots] for p in pids])
        tru = np.array([[abs(cell[p, n]["truth"]) for n in roots] for p in pids])
        out[name] = (pids, err, tru)
    return out


def _aggregate_wmape(tables, idx=None):
    vals = []
    for _, err, tru in tables.values():
        e, t = (err, tru) if idx is None else (err[idx], tru[idx])
        vals.append((e.sum(axis=-2) / t.sum(axis=-2)).mean(axis=-1) * 100.0)
    return np.mean(vals, axis=0)


def test_07_m_all_degradation(criterion):
    rec = criterion(7, "M-All reconstruction error falls with q")
    start = time.perf_counter()
    spec = SweepSpec(Experiment.RQ2, methods=["M-All"], strategies=["B"], priors=["informed"], eps_r=[0.1],
                     q=Q_LEVELS, n_patients=200)
    res = run_sweep(spec)
    assert not res.failures
    tables = {q: _all_roots_by_template(res.rows, q) for q in Q_LEVELS}
    means = [float(_aggregate_wmape(tables[q])) for q in Q_LEVELS]
    rng = stream(spec.seed, "acceptance", 7)
    idx = rng.integers(0, 200, size=(1000, 200))
    bounds = []
    for qa, qb in zip(Q_LEVELS, Q_LEVELS[1:]):
        assert all(tables[qa][t][0] == tables[qb][t][0] for t in TEMPLATE_NAMES)
        diff = _aggregate_wmape(tables[qb], idx) - _aggregate_wmape(tables[qa], idx)
        bounds.append(float(np.quantile(diff, 0.05)))
    ratio = means[-1] / means[0]
    elapsed = time.perf_counter() - start
    rec.detail = (" -> ".join(f"{m:.2f}" for m in means) + f", ratio {ratio:.3f}, "
                  f"max increase bound {max(bounds):.2f}, {elapsed:.1f}s")
    assert ratio <= 0.45
    assert max(bounds) <= 0
    assert elapsed < 120


def test_08_double_asymmetry(criterion):
    rec = criterion(8, "M-All flat, M-Opt improves with turns")
    start = time.perf_counter()
    res = run_sweep(SweepSpec(Experiment.RQ1, epsilons=[0.1], n_patients=200))
    assert not res.failures
    cells = {(c["method"], c["multiplier"]): c for c in res.summary["cells"]}
    allm = [cells["M-All", m] for m in MULTS]
    opt = [cells["M-Opt", m] for m in MULTS]
    spread = max(c["wmape"] for c in allm) - min(c["wmape"] for c in allm)
    assert spread < 2 * max(c["wmape_se"] for c in allm)
    for hi, lo in zip(opt, opt[1:]):
        assert hi["wmape"] - lo["wmape"] > max(hi["wmape_se"], lo["wmape_se"])
    for m in MULTS:
        assert cells["M-All", m]["wmape"] >= cells["M-Roots", m]["wmape"] >= cells["M-Opt", m]["wmape"]
    elapsed = time.perf_counter() - start
    rec.detail = "; ".join(
        f"{meth} " + "/".join(f"{cells[meth, m]['wmape']:.2f}" for m in MULTS) for meth in ("M-All", "M-Roots", "M-Opt")
    ) + f", {elapsed:.1f}s"
    assert elapsed < 300


def test_09_bit_identical_seeding(criterion):
    rec = criterion(9, "M-All first draw equals M-Roots cache")
    spec = SweepSpec(Experiment.RQ2, methods=["M-All", "M-Roots"], strategies=["B"], priors=["uniform"], eps_r=[0.1],
                     q=[1], n_patients=200)
    checked = 0
    texts = []
    for workers in (1, 2):
        res = run_sweep(spec, workers=workers)
        texts.append(res.csv_text())
        first = {}
        for r in res.rows:
            first.setdefault(r["method"], {})[r["template"], r["patient"], r["root"]] = r["first_release"]
        assert first["M-All"].keys() == first["M-Roots"].keys()
        for key, value in first["M-All"].items():
            assert value is not None and value == first["M-Roots"][key]
        checked += len(first["M-All"])
    assert texts[0] == texts[1]
    rec.detail = f"{checked} (template, root, patient) triples over 2 thread counts"


def test_10_metric_oracles(criterion):
    rec = criterion(10, "wMAPE and RCE hand-computed cases")
    fib = get_template("FIB4")
    assert wmape([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert wmape([1.0, 1.0], [0.0, 2.0]) == 100.0
    assert wmape([10.0, 10.0], [11.0, 9.0]) == pytest.approx(10.0, abs=1e-12)
    assert risk_class_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], fib) == 0.0
    assert risk_class_error([1.0], [3.0], fib) == 100.0
    assert risk_class_error([1.0, 1.0], [1.0, 2.0], fib) == 25.0
    rec.detail = "6 cases"


def test_11_nhanes_reproduction(criterion):
    rec = criterion(11, "NHANES focal cell reproduction (conditional)")
    source = os.environ.get(NHANES_ENV)
    if not source:
        rec.detail = f"skipped, set {NHANES_ENV} to a directory of <TEMPLATE>.csv files"
        pytest.skip(f"{NHANES_ENV} not set")
    if not Path(source).is_dir():
        pytest.fail(f"{NHANES_ENV}={source} is not a directory")
    rq1 = run_sweep(SweepSpec(Experiment.RQ1, epsilons=[0.1], budget_multipliers=["2k+1"],
                              methods=["M-All", "M-Opt"], population=source))
    cells = {c["method"]: c for c in rq1.summary["cells"]}
    rq2 = run_sweep(SweepSpec(Experiment.RQ2, methods=["M-All"], strategies=["B"], priors=["informed"],
                              eps_r=[0.1], q=[1, 16], population=source))
    trend = {c["q"]: c["all_roots"] for c in rq2.summary["cells"]}
    rec.detail = (f"M-All {cells['M-All']['wmape']:.2f}, M-Opt {cells['M-Opt']['wmape']:.2f}, "
                  f"q-trend {trend[1]:.2f} -> {trend[16]:.2f}")
    assert not rq1.failures and not rq2.failures
    assert abs(cells["M-All"]["wmape"] - 20.3) <= 2.0
    assert abs(cells["M-Opt"]["wmape"] - 7.8) <= 2.0
    assert abs(trend[1] - 10.2) <= 1.5
    assert abs(trend[16] - 3.2) <= 1.5
