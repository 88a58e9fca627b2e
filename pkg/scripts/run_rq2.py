"""Reconstruction sweep over q, strategies A/B and both priors."""

import argparse
import sys

from rootguard.harness import Experiment, SweepSpec, render_table, run_sweep


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--mechanism", nargs="+", default=["exponential"])
    p.add_argument("--eps", nargs="+", type=float, default=[0.05, 0.1, 0.2, 0.5])
    p.add_argument("--patients", type=int, default=200)
    p.add_argument("--population", help="CSV directory; synthetic when omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results/rq2")
    a = p.parse_args()
    spec = SweepSpec(Experiment.RQ2, mechanisms=a.mechanism, eps_r=a.eps, n_patients=a.patients, seed=a.seed,
                     population=a.population)
    res = run_sweep(spec, out_dir=a.out, workers=a.workers)
    sys.stdout.write(render_table(res.summary))
    return 1 if res.failures else 0


if __name__ == "__main__":
    sys.exit(main())
