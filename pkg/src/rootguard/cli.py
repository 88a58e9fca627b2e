"""Command-line entry point: ``rootguard <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import DEFAULT_EPSILONS, MULTIPLIERS, Experiment, SweepSpec, render_table, run_sweep
from .population import PopulationStats, synthesize, write_csv
from .templates import TEMPLATE_NAMES, get_template


def _load_config(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise SystemExit(f"{path}: config must be a key-value mapping")
    return data


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON file whose keys mirror the sweep fields")
    p.add_argument("--template", nargs="+", dest="templates", metavar="NAME", help="templates (default: all 8)")
    p.add_argument("--mechanism", nargs="+", dest="mechanisms", metavar="KIND",
                   help="exponential, blap, staircase (default: exponential)")
    p.add_argument("--patients", type=int, dest="n_patients", help="patients per template (default 200)")
    p.add_argument("--seed", type=int)
    p.add_argument("--population", help="CSV file, or a directory of <TEMPLATE>.csv files; synthetic if omitted")
    p.add_argument("--out", help="directory for rows CSV and summary JSON")
    p.add_argument("--workers", type=int, default=1, help="worker threads (output does not depend on this)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rootguard", description="Root-once sanitization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    rq1 = sub.add_parser("rq1", help="target utility sweep")
    _common(rq1)
    rq1.add_argument("--method", nargs="+", dest="methods", metavar="M")
    rq1.add_argument("--eps", nargs="+", type=float, dest="epsilons", metavar="E")
    rq1.add_argument("--budget-mult", nargs="+", dest="budget_multipliers", metavar="T", choices=MULTIPLIERS)
    rq1.add_argument("--reuse-latest", action="store_true",
                     help="M-All bundle reuses each root's latest draw instead of re-noising")

    rq2 = sub.add_parser("rq2", help="reconstruction attack sweep")
    _common(rq2)
    rq2.add_argument("--method", nargs="+", dest="methods", metavar="M")
    rq2.add_argument("--eps", nargs="+", type=float, dest="eps_r", metavar="E", help="per-root epsilon")
    rq2.add_argument("--q", nargs="+", type=int, metavar="Q")
    rq2.add_argument("--prior", nargs="+", dest="priors", choices=("uniform", "informed"))
    rq2.add_argument("--strategy", nargs="+", dest="strategies", choices=("A", "B"))

    rq3 = sub.add_parser("alloc-dump", help="dump M-Opt allocations and power-law slopes")
    _common(rq3)
    rq3.add_argument("--eps", nargs="+", type=float, dest="epsilons", metavar="E")
    rq3.add_argument("--budget-mult", nargs="+", dest="budget_multipliers", metavar="T", choices=MULTIPLIERS)

    table = sub.add_parser("table", help="render a summary JSON as a text table")
    table.add_argument("summary", help="path to an *_summary.json file")

    synth = sub.add_parser("synth", help="write synthetic population CSVs")
    synth.add_argument("--template", nargs="+", dest="templates", default=list(TEMPLATE_NAMES))
    synth.add_argument("--patients", type=int, default=2000)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)

    val = sub.add_parser("validate", help="run the property and acceptance test suite")
    val.add_argument("--tests", help="tests directory (default: ./tests)")
    val.add_argument("pytest_args", nargs="*", help="extra arguments passed to pytest")
    return parser


_SWEEP_KEYS = ("templates", "mechanisms", "methods", "epsilons", "budget_multipliers", "eps_r", "q", "priors",
               "strategies", "n_patients", "seed", "population")


def spec_from_args(args: argparse.Namespace, experiment: Experiment) -> SweepSpec:
    data = _load_config(args.config) if args.config else {}
    data.setdefault("experiment", experiment.value)
    if Experiment.parse(data["experiment"]) is not experiment:
        raise SystemExit(f"config is for {data['experiment']}, not {experiment.value}")
    for key in _SWEEP_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "reuse_latest", False):
        data["bundle_fresh"] = False
    if experiment is Experiment.RQ3 and "epsilons" not in data:
        data["epsilons"] = list(DEFAULT_EPSILONS)
    return SweepSpec.from_mapping(data)


def _run(args, experiment: Experiment) -> int:
    spec = spec_from_args(args, experiment)
    result = run_sweep(spec, out_dir=args.out, workers=args.workers)
    sys.stdout.write(render_table(result.summary))
    for f in result.failures:
        sys.stderr.write(f"failed cell: {json.dumps(f, sort_keys=True)}\n")
    return 1 if result.failures else 0


def _synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.templates:
        template = get_template(name)
        patients = synthesize(template, args.patients, args.seed)
        write_csv(out / f"{template.name}.csv", patients, template.root_names)
        stats = PopulationStats.from_patients(patients, template.root_names)
        (out / f"{template.name}.stats.json").write_text(stats.to_json(), encoding="utf-8")
        print(f"{template.name}: {len(patients)} patients -> {out / (template.name + '.csv')}")
    return 0


def _validate(args) -> int:
    try:
        import pytest
    except ImportError:
        sys.stderr.write("validate needs pytest; install the 'test' extra\n")
        return 2
    tests = Path(args.tests) if args.tests else Path.cwd() / "tests"
    if not tests.is_dir():
        sys.stderr.write(f"no tests directory at {tests}\n")
        return 2
    return int(pytest.main([str(tests), *args.pytest_args]))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "rq1":
        return _run(args, Experiment.RQ1)
    if args.command == "rq2":
        return _run(args, Experiment.RQ2)
    if args.command == "alloc-dump":
        return _run(args, Experiment.RQ3)
    if args.command == "table":
        summary = json.loads(Path(args.summary).read_text(encoding="utf-8"))
        sys.stdout.write(render_table(summary))
        return 0
    if args.command == "synth":
        return _synth(args)
    return _validate(args)


if __name__ == "__main__":
    sys.exit(main())
