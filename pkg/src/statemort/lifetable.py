"""Life-table ingestion: parsing, validation, windowing, and national aggregation.

Raw data arrives as delimited text with one (state, sex, age, year) cell per
row.  Cells are converted to log-mortality observations and arranged in the
canonical order (population-major, then age-major, then year ascending) so
that every downstream matrix is reproducible.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    EmptySubset,
    IncompleteCoverage,
    MissingCell,
    ParseError,
    RateAboveOne,
    ZeroExposure,
)
from .states import validate_state

SEXES = ("male", "female")

# Canonical column names -> header names in the input file.  Releases of the
# source database shuffle header spellings, so the map is configurable.
DEFAULT_SCHEMA: dict[str, str] = {
    "state": "state",
    "sex": "sex",
    "age": "age",
    "year": "year",
    "deaths": "deaths",
    "exposure": "exposure",
}

_SEX_ALIASES = {
    "male": "male", "m": "male", "males": "male",
    "female": "female", "f": "female", "females": "female",
}


@dataclass(frozen=True)
class LifeTableRecord:
    """One validated (state, sex, age, year) cell."""

    state: str
    sex: str
    age: int
    year: int
    deaths: float
    exposure: float


@dataclass(frozen=True)
class TrainingSet:
    """Log-mortality observations in canonical order.

    `ages`, `years`, `labels`, and `y` are parallel arrays; `labels` holds
    population indices 0..L-1 and `population_names` maps them back to state
    codes (or "US" for the aggregated series).  `excluded_cells` records
    zero-death cells dropped during construction.
    """

    ages: np.ndarray
    years: np.ndarray
    labels: np.ndarray
    y: np.ndarray
    population_names: tuple[str, ...]
    excluded_cells: tuple[tuple[str, int, int], ...] = field(default=())

    def __post_init__(self):
        n = len(self.y)
        if not (len(self.ages) == len(self.years) == len(self.labels) == n):
            raise ValueError("training arrays must have equal length")
        triples = set(zip(self.ages.tolist(), self.years.tolist(), self.labels.tolist()))
        if len(triples) != n:
            raise ValueError("duplicate (age, year, population) cell in training set")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_populations(self) -> int:
        return len(self.population_names)


def log_mortality(deaths: float, exposure: float) -> float:
    """Natural log of the central mortality rate deaths/exposure.

    Zero deaths have no finite log-rate; such cells are excluded from training
    rather than patched, so MissingCell is raised for the caller to handle.
    """
    if exposure <= 0:
        raise ZeroExposure(f"exposure must be positive, got {exposure}")
    if deaths < 0:
        raise ValueError(f"deaths must be nonnegative, got {deaths}")
    if deaths == 0:
        raise MissingCell("zero deaths: cell has no finite log-mortality")
    return math.log(deaths / exposure)


def _normalize_sex(raw: str, line: int | None = None) -> str:
    key = raw.strip().lower()
    if key not in _SEX_ALIASES:
        raise ParseError(f"unrecognized sex value {raw!r}", line=line)
    return _SEX_ALIASES[key]


def parse_usmdb(source, schema: dict[str, str] | None = None) -> list[LifeTableRecord]:
    """Parse a delimited life-table file into validated records.

    `source` is a path or a text stream.  A header row is required; comma and
    tab delimiters are auto-detected.  Any malformed row aborts the parse with
    its 1-based line number.
    """
    schema = dict(DEFAULT_SCHEMA, **(schema or {}))
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return parse_usmdb(fh, schema)

    text = source.read()
    first_line = text.splitlines()[0] if text.strip() else ""
    delimiter = "\t" if ("\t" in first_line and "," not in first_line) else ","
    reader = csv.DictReader(
        (ln for ln in io.StringIO(text) if not ln.startswith("#")),
        delimiter=delimiter,
    )
    if reader.fieldnames is None:
        raise ParseError("empty input: header row required")
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header

    required = ["state", "sex", "age", "year", "deaths", "exposure"]
    missing = [schema[k] for k in required if schema[k] not in header]
    if missing:
        raise ParseError(f"missing required columns: {', '.join(missing)}")

    records: list[LifeTableRecord] = []
    for lineno, row in enumerate(reader, start=2):
        try:
            state = validate_state(row[schema["state"]], line=lineno)
            sex = _normalize_sex(row[schema["sex"]], line=lineno)
            # Open age intervals like "85+" are tolerated here and windowed
            # out later.
            age = int(row[schema["age"]].strip().rstrip("+"))
            year = int(row[schema["year"]].strip())
            deaths = float(row[schema["deaths"]])
            exposure = float(row[schema["exposure"]])
        except (ParseError, ZeroExposure):
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed row: {exc}", line=lineno) from exc
        if exposure <= 0:
            raise ZeroExposure(f"exposure {exposure} is not positive", line=lineno)
        if deaths < 0:
            raise ParseError(f"negative deaths {deaths}", line=lineno)
        records.append(LifeTableRecord(state, sex, age, year, deaths, exposure))
    return records


def write_records(records, stream) -> None:
    """Serialize records with full float precision; round-trips via parse_usmdb."""
    writer = csv.writer(stream)
    writer.writerow(["state", "sex", "age", "year", "deaths", "exposure"])
    for r in records:
        writer.writerow([r.state, r.sex, r.age, r.year, repr(r.deaths), repr(r.exposure)])


def _build_training_set(cells, name: str) -> TrainingSet:
    """cells: iterable of (age, year, deaths, exposure), already windowed."""
    kept, excluded = [], []
    for age, year, deaths, exposure in cells:
        if deaths >= exposure:
            raise RateAboveOne(
                f"{name} (age={age}, year={year}): rate {deaths / exposure:.4f} >= 1"
            )
        if deaths == 0:
            excluded.append((name, age, year))
            continue
        kept.append((age, year, math.log(deaths / exposure)))
    if not kept:
        raise EmptySubset(f"no usable cells for {name}")
    kept.sort(key=lambda c: (c[0], c[1]))
    ages = np.array([c[0] for c in kept], dtype=int)
    years = np.array([c[1] for c in kept], dtype=int)
    y = np.array([c[2] for c in kept], dtype=float)
    return TrainingSet(
        ages=ages,
        years=years,
        labels=np.zeros(len(kept), dtype=int),
        y=y,
        population_names=(name,),
        excluded_cells=tuple(excluded),
    )


def subset(records, ages: tuple[int, int], years: tuple[int, int], sex: str) -> TrainingSet:
    """Window records to inclusive age/year ranges for one sex.

    Expects records from a single state; duplicate (age, year) cells after
    filtering are rejected.  Output is age-major, year-ascending.
    """
    lo_a, hi_a = ages
    lo_y, hi_y = years
    if lo_a > hi_a or lo_y > hi_y:
        raise EmptySubset(f"empty window ages={ages} years={years}")
    sex = _normalize_sex(sex)
    picked = [
        r for r in records
        if r.sex == sex and lo_a <= r.age <= hi_a and lo_y <= r.year <= hi_y
    ]
    if not picked:
        raise EmptySubset(f"no records in ages={ages}, years={years}, sex={sex}")
    seen = set()
    for r in picked:
        key = (r.age, r.year)
        if key in seen:
            raise ParseError(f"duplicate cell (age={r.age}, year={r.year})")
        seen.add(key)
    name = picked[0].state if len({r.state for r in picked}) == 1 else "pooled"
    return _build_training_set(
        ((r.age, r.year, r.deaths, r.exposure) for r in picked), name
    )


def aggregate_national(records, sex: str,
                       ages: tuple[int, int] | None = None,
                       years: tuple[int, int] | None = None) -> TrainingSet:
    """Sum deaths and exposures across states, then take log-mortality.

    Every state present in the input must cover every (age, year) cell in the
    input; a gap raises IncompleteCoverage naming the missing states.
    """
    sex = _normalize_sex(sex)
    picked = [r for r in records if r.sex == sex]
    if ages is not None:
        picked = [r for r in picked if ages[0] <= r.age <= ages[1]]
    if years is not None:
        picked = [r for r in picked if years[0] <= r.year <= years[1]]
    if not picked:
        raise EmptySubset(f"no records to aggregate for sex={sex}")

    states = sorted({r.state for r in picked})
    cells: dict[tuple[int, int], dict[str, tuple[float, float]]] = {}
    for r in picked:
        cells.setdefault((r.age, r.year), {})[r.state] = (r.deaths, r.exposure)
    for cell in sorted(cells):
        missing = [s for s in states if s not in cells[cell]]
        if missing:
            raise IncompleteCoverage(cell, missing)

    totals = []
    for (age, year), per_state in sorted(cells.items()):
        deaths = sum(d for d, _ in per_state.values())
        exposure = sum(e for _, e in per_state.values())
        totals.append((age, year, deaths, exposure))
    return _build_training_set(totals, "US")


def combine(sets, names=None) -> TrainingSet:
    """Stack single-population training sets into one multi-output set.

    Population indices follow the order of `sets`; within each population the
    canonical cell order is preserved (population-major layout).
    """
    sets = list(sets)
    if names is None:
        names = [ts.population_names[0] for ts in sets]
    if len(names) != len(sets) or len(set(names)) != len(names):
        raise ValueError("population names must be distinct and match sets")
    for ts in sets:
        if ts.n_populations != 1:
            raise ValueError("combine expects single-population training sets")
    ages = np.concatenate([ts.ages for ts in sets])
    years = np.concatenate([ts.years for ts in sets])
    y = np.concatenate([ts.y for ts in sets])
    labels = np.concatenate(
        [np.full(ts.n, i, dtype=int) for i, ts in enumerate(sets)]
    )
    excluded = tuple(c for ts in sets for c in ts.excluded_cells)
    return TrainingSet(ages, years, labels, y, tuple(names), excluded)


def training_set_to_csv(ts: TrainingSet, stream) -> None:
    """Canonical CSV serialization: population, age, year, log_mortality."""
    writer = csv.writer(stream)
    writer.writerow(["population", "age", "year", "log_mortality"])
    for i in range(ts.n):
        writer.writerow(
            [int(ts.labels[i]), int(ts.ages[i]), int(ts.years[i]), repr(float(ts.y[i]))]
        )


def training_set_from_csv(stream, population_names=None) -> TrainingSet:
    reader = csv.DictReader(ln for ln in stream if not ln.startswith("#"))
    ages, years, labels, y = [], [], [], []
    for row in reader:
        labels.append(int(row["population"]))
        ages.append(int(row["age"]))
        years.append(int(row["year"]))
        y.append(float(row["log_mortality"]))
    if not y:
        raise EmptySubset("training CSV holds no rows")
    n_pop = max(labels) + 1
    if population_names is None:
        population_names = tuple(f"pop{i}" for i in range(n_pop))
    return TrainingSet(
        np.array(ages), np.array(years), np.array(labels, dtype=int),
        np.array(y, dtype=float), tuple(population_names),
    )


def select_population(ts: TrainingSet, index: int) -> TrainingSet:
    """Single-population slice of a combined training set."""
    mask = ts.labels == index
    return TrainingSet(
        ts.ages[mask], ts.years[mask], np.zeros(int(mask.sum()), dtype=int),
        ts.y[mask], (ts.population_names[index],),
    )
