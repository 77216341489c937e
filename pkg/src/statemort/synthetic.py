"""Seeded synthetic inputs for demos and the end-to-end determinism check.

The generated surfaces follow the same structure the model assumes: log-rates
linear in age with a state-specific level, a slow year trend, a mild cohort
ripple, and noise that shrinks with state population.  Covariates are built
from the same latent state effects so that PCA grouping finds real structure.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .covariates import COVARIATE_IDS
from .states import STATE_IDS


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, stream)))


def generate(out_dir, seed: int = 7, ages=range(60, 66), years=range(2000, 2008)):
    """Write mortality, covariate, population, and life-expectancy files.

    Returns a dict of the four file paths.  Everything is a pure function of
    `seed`, so regenerating into a fresh directory yields identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ages = list(ages)
    years = list(years)
    n_states = len(STATE_IDS)

    rng = _rng(seed, 0)
    # Two latent factors per state: wealth-like level and climate-like axis.
    wealth = rng.normal(size=n_states)
    climate = rng.normal(size=n_states)
    extra = rng.normal(size=n_states)
    populations = np.exp(rng.normal(np.log(4e6), 0.85, size=n_states))

    # State mortality structure tied to the latent factors.
    level = -4.55 - 0.12 * wealth + 0.03 * climate
    slope = 0.088 + 0.004 * _rng(seed, 1).normal(size=n_states)
    improvement = 0.009 + 0.004 * wealth - 0.002 * extra
    sigma = 0.015 + 0.05 / np.sqrt(populations / 1e6)

    paths = {
        "mortality": out / "mortality.csv",
        "covariates": out / "covariates.csv",
        "populations": out / "populations.csv",
        "life_expectancy": out / "life_expectancy.csv",
    }

    noise_rng = _rng(seed, 2)
    with open(paths["mortality"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "sex", "age", "year", "deaths", "exposure"])
        for i, state in enumerate(STATE_IDS):
            for sex, sex_shift in (("female", 0.0), ("male", 0.38)):
                eps = noise_rng.normal(0.0, sigma[i], size=(len(ages), len(years)))
                for ai, age in enumerate(ages):
                    for ti, year in enumerate(years):
                        cohort = year - age
                        y = (level[i] + sex_shift
                             + slope[i] * (age - 60)
                             - improvement[i] * (year - years[0])
                             + 0.02 * np.sin(2.0 * np.pi * (cohort % 17) / 17.0)
                             + eps[ai, ti])
                        exposure = populations[i] * 0.011 * np.exp(-(age - 60) / 14.0)
                        deaths = exposure * np.exp(y)
                        writer.writerow([state, sex, age, year,
                                         repr(float(deaths)), repr(float(exposure))])

    cov_rng = _rng(seed, 3)
    with open(paths["covariates"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", *COVARIATE_IDS])
        weights = cov_rng.normal(size=(len(COVARIATE_IDS), 3))
        scales = np.exp(cov_rng.normal(1.0, 0.8, size=len(COVARIATE_IDS)))
        offsets = cov_rng.normal(10.0, 5.0, size=len(COVARIATE_IDS))
        noise = cov_rng.normal(0.0, 0.6, size=(n_states, len(COVARIATE_IDS)))
        latent = np.column_stack([wealth, climate, extra])
        values = offsets + scales * (latent @ weights.T + noise)
        for i, state in enumerate(STATE_IDS):
            writer.writerow([state, *[repr(float(v)) for v in values[i]]])

    with open(paths["populations"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "population"])
        for i, state in enumerate(STATE_IDS):
            writer.writerow([state, repr(float(np.round(populations[i])))])

    le_rng = _rng(seed, 4)
    with open(paths["life_expectancy"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "life_expectancy"])
        le = 78.5 + 1.8 * wealth + le_rng.normal(0.0, 0.4, size=n_states)
        for i, state in enumerate(STATE_IDS):
            writer.writerow([state, repr(float(le[i]))])

    return {k: str(v) for k, v in paths.items()}
