"""Fit the allocation power law per mechanism and print the slopes."""

import argparse

from rootguard.harness import DEFAULT_EPSILONS, MULTIPLIERS, Experiment, SweepSpec, powerlaw_slope, run_sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--eps", nargs="+", type=float, default=list(DEFAULT_EPSILONS))
    p.add_argument("--budget-mult", nargs="+", default=list(MULTIPLIERS))
    p.add_argument("--out", help="directory for allocation dumps")
    a = p.parse_args()
    mechs = ["exponential", "blap", "staircase"]
    spec = SweepSpec(Experiment.RQ3, mechanisms=mechs, epsilons=a.eps, budget_multipliers=a.budget_mult)
    res = run_sweep(spec, out_dir=a.out)
    for mech in mechs:
        rows = [r for r in res.rows if r.get("mechanism") == mech]
        print(f"{mech:12s} pooled slope {powerlaw_slope(rows):.4f}")
    for s in res.summary["slopes"]:
        slope = "-" if s["slope"] is None else f"{s['slope']:.4f}"
        print(f"  {s['mechanism']:12s} eps={s['epsilon']:<6g} {s['multiplier']:5s} {slope}")


if __name__ == "__main__":
    main()
