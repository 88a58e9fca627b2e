"""Patient populations: CSV ingestion and a truncated-Gaussian generator.

CSV schema: a header row with an ``id`` column plus one column per root name
of the template (names as in the template data file, case-sensitive).  Extra
columns are ignored.  One row per patient.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError
from .rng import AUX_TAG, stream
from .templates import Template

TEST_SIZE = 200


@dataclass(frozen=True)
class Patient:
    id: int
    values: Mapping[str, float]

    def vector(self, roots: Sequence[str]) -> list[float]:
        return [self.values[r] for r in roots]


@dataclass(frozen=True)
class RootStats:
    min: float
    max: float
    mean: float
    std: float


@dataclass(frozen=True)
class PopulationStats:
    roots: Mapping[str, RootStats]
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"need at least two patients for statistics, got {self.n}")

    @classmethod
    def from_patients(cls, patients: Sequence[Patient], roots: Sequence[str]) -> "PopulationStats":
        if len(patients) < 2:
            raise ConfigError(f"need at least two patients for statistics, got {len(patients)}")
        out = {}
        for r in roots:
            col = np.array([p.values[r] for p in patients], dtype=float)
            out[r] = RootStats(float(col.min()), float(col.max()), float(col.mean()), float(col.std(ddof=1)))
        return cls(out, len(patients))

    def bounds(self) -> dict[str, tuple[float, float]]:
        return {r: (s.min, s.max) for r, s in self.roots.items()}

    def means(self) -> dict[str, float]:
        return {r: s.mean for r, s in self.roots.items()}

    def stds(self) -> dict[str, float]:
        return {r: s.std for r, s in self.roots.items()}

    def to_dict(self) -> dict:
        return {"n": self.n, "roots": {r: asdict(s) for r, s in self.roots.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PopulationStats":
        data = json.loads(text)
        return cls({r: RootStats(**v) for r, v in data["roots"].items()}, int(data["n"]))


@dataclass(frozen=True)
class Population:
    """A template's patients with the splits used by the experiments.

    ``stats`` covers every row (it fixes the domain bounds).  ``reference``
    holds the means and stds used for sensitivities and informed priors.
    """

    template: Template
    patients: tuple[Patient, ...]
    stats: PopulationStats
    reference: PopulationStats
    test_size: int = TEST_SIZE
    source: str = "synthetic"

    @property
    def test(self) -> tuple[Patient, ...]:
        return self.patients[: self.test_size]

    @property
    def holdout(self) -> tuple[Patient, ...]:
        return self.patients[self.test_size:]

    def calibrated_template(self) -> Template:
        """Template with bounds from all rows and means/stds from the reference statistics."""
        return self.template.with_stats(self.stats.bounds(), self.reference.means(), self.reference.stds())

    def truth_matrix(self, patients: Sequence[Patient] | None = None) -> np.ndarray:
        rows = self.test if patients is None else patients
        return np.array([p.vector(self.template.root_names) for p in rows], dtype=float)


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"row {row}, column {column!r}: {text!r} is not a number", row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {text!r}", row=row, column=column)
    return value


def read_patients(path: str | Path, template: Template) -> list[Patient]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ("id", *template.root_names):
            if col not in header:
                raise SchemaError(f"{path.name}: missing column {col!r}", column=col)
        patients = []
        for i, rec in enumerate(reader, start=2):  # header is line 1
            pid = rec["id"]
            try:
                pid = int(pid)
            except (TypeError, ValueError):
                raise ParseError(f"row {i}, column 'id': {pid!r} is not an integer", row=i, column="id") from None
            values = {r: _parse_cell(rec[r], i, r) for r in template.root_names}
            patients.append(Patient(pid, values))
    return patients


def load_csv(path: str | Path, template: Template, test_size: int = TEST_SIZE) -> Population:
    """Load a population.  The first ``test_size`` rows form the test split, the rest the holdout."""
    patients = read_patients(path, template)
    stats = PopulationStats.from_patients(patients, template.root_names)
    holdout = patients[test_size:]
    reference = PopulationStats.from_patients(holdout, template.root_names) if len(holdout) >= 2 else stats
    return Population(template, tuple(patients), stats, reference, test_size, source=str(path))


def write_csv(path: str | Path, patients: Iterable[Patient], roots: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *roots])
        for p in patients:
            w.writerow([p.id, *(repr(float(p.values[r])) for r in roots)])


@dataclass(frozen=True)
class GeneratorParams:
    mean: float
    std: float
    lower: float
    upper: float

    def __post_init__(self):
        if not (self.std > 0 and self.lower < self.upper):
            raise ConfigError(f"infeasible generator parameters {self}")


def generator_params(template: Template) -> dict[str, GeneratorParams]:
    return {r.name: GeneratorParams(r.pop_mean, r.pop_std, r.lower, r.upper) for r in template.roots}


def _truncated_normal(params: GeneratorParams, n: int, rng: np.random.Generator, max_rounds: int = 1000) -> np.ndarray:
    out = np.empty(0)
    for _ in range(max_rounds):
        draw = rng.normal(params.mean, params.std, size=max(2 * (n - out.size), 16))
        draw = draw[(draw >= params.lower) & (draw <= params.upper)]
        out = np.concatenate([out, draw])
        if out.size >= n:
            return out[:n]
    raise ConfigError(f"rejection sampling made no progress for {params}; the bounds hold almost no mass")


def synthesize(template: Template, n: int, seed: int = 0,
               params: Mapping[str, GeneratorParams] | None = None) -> list[Patient]:
    """``n`` patients with independent truncated-Gaussian roots, deterministic in ``seed``."""
    if n < 1:
        raise ConfigError("population size must be positive")
    params = generator_params(template) if params is None else params
    cols = {}
    for i, name in enumerate(template.root_names):
        rng = stream(seed, template.name, AUX_TAG, i)
        cols[name] = _truncated_normal(params[name], n, rng)
    return [Patient(j, {name: float(cols[name][j]) for name in template.root_names}) for j in range(n)]


def synthetic_population(template: Template, n: int = TEST_SIZE, seed: int = 0,
                         params: Mapping[str, GeneratorParams] | None = None) -> Population:
    """Synthetic population whose statistics are the generator's own parameters.

    The domain bounds stay at the generator bounds, so every candidate a
    sanitizer may release is a value the generator could have produced.
    """
    params = generator_params(template) if params is None else params
    patients = synthesize(template, n, seed, params)
    ref = PopulationStats({r: RootStats(p.lower, p.upper, p.mean, p.std) for r, p in params.items()}, max(n, 2))
    return Population(template, tuple(patients), ref, ref, min(n, TEST_SIZE), source="synthetic")


def load_population(template: Template, source: str | Path | None = None, n: int = TEST_SIZE,
                    seed: int = 0) -> Population:
    """CSV file, a directory holding ``<TEMPLATE>.csv``, or a synthetic population when ``source`` is None."""
    if source is None:
        return synthetic_population(template, n, seed)
    path = Path(source)
    if path.is_dir():
        path = path / f"{template.name}.csv"
    return load_csv(path, template)
