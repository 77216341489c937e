"""Derived mortality analytics: improvement factors, rankings, and spreads.

All quantities are computed from latent (noise-free) posterior surfaces.  An
improvement factor compares the smoothed log-rate of adjacent years,
1 - exp(m(a, t) - m(a, t-1)), so falling mortality shows up as a positive
number.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InvariantBreach
from .gp import FittedModel, predict
from .kernels import InputPoint


@dataclass(frozen=True)
class RankTable:
    """States ordered best (lowest rate) first at one (age, year)."""

    age: int
    year: int
    entries: tuple[tuple[str, float], ...]

    def top(self, k: int = 5) -> tuple[str, ...]:
        return tuple(s for s, _ in self.entries[:k])

    def bottom(self, k: int = 5) -> tuple[str, ...]:
        return tuple(s for s, _ in self.entries[-k:][::-1])


@dataclass(frozen=True)
class MiSurface:
    """Improvement factors and interval bounds on an age x year grid."""

    state: str
    sex: str
    ages: tuple[int, ...]
    years: tuple[int, ...]
    mi: np.ndarray      # (n_ages, n_years)
    lower: np.ndarray
    upper: np.ndarray
    level: float


def _latent_means(model: FittedModel, state, ages, years) -> np.ndarray:
    idx = model.population_index(state)
    pts = [InputPoint(a, t, idx) for a in ages for t in years]
    return predict(model, pts, latent_only=True).mean.reshape(len(ages), len(years))


def improvement_factor(model: FittedModel, state, age: int, year: int) -> float:
    """Annualized improvement 1 - exp(m(a, t) - m(a, t-1)) from latent means."""
    if model.hyperparameters.kernel.family != "sqexp":
        warnings.warn(
            "improvement factors are intended for squared-exponential fits; "
            f"model uses {model.hyperparameters.kernel.family}",
            stacklevel=2,
        )
    m = _latent_means(model, state, [age], [year - 1, year])
    return 1.0 - math.exp(float(m[0, 1] - m[0, 0]))


def mi_interval(model: FittedModel, state, age: int, year: int,
                level: float = 0.95) -> tuple[float, float, float]:
    """Equal-tailed credible interval for the improvement factor.

    The log-rate difference of adjacent years is Gaussian under the joint
    latent posterior; its interval maps through the decreasing transform
    1 - exp, which swaps the endpoint order.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be inside (0, 1)")
    idx = model.population_index(state)
    pts = [InputPoint(age, year - 1, idx), InputPoint(age, year, idx)]
    post = predict(model, pts, with_covariance=True, latent_only=True)
    cov = post.covariance
    mu = float(post.mean[1] - post.mean[0])
    var = float(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1])
    if var < -1e-10:
        raise InvariantBreach(f"negative difference variance {var}")
    sd = math.sqrt(max(var, 0.0))
    z = float(norm.ppf(0.5 * (1.0 + level)))
    lower = 1.0 - math.exp(mu + z * sd)
    point = 1.0 - math.exp(mu)
    upper = 1.0 - math.exp(mu - z * sd)
    return lower, point, upper


def mi_surface(model: FittedModel, state, sex: str, ages, years,
               level: float = 0.95) -> MiSurface:
    """Improvement factors with intervals for every (age, year) cell.

    One joint latent prediction covers the full grid plus the preceding
    years, so each cell's interval uses the exact pairwise covariance.
    """
    ages = tuple(int(a) for a in ages)
    years = tuple(int(t) for t in years)
    idx = model.population_index(state)
    all_years = sorted({t for t in years} | {t - 1 for t in years})
    pts = [InputPoint(a, t, idx) for a in ages for t in all_years]
    post = predict(model, pts, with_covariance=True, latent_only=True)
    pos = {(a, t): i for i, (a, t) in enumerate((a, t) for a in ages for t in all_years)}
    z = float(norm.ppf(0.5 * (1.0 + level)))
    mi = np.empty((len(ages), len(years)))
    lo = np.empty_like(mi)
    hi = np.empty_like(mi)
    for i, a in enumerate(ages):
        for j, t in enumerate(years):
            p1, p0 = pos[(a, t)], pos[(a, t - 1)]
            mu = float(post.mean[p1] - post.mean[p0])
            var = float(post.covariance[p1, p1] + post.covariance[p0, p0]
                        - 2.0 * post.covariance[p1, p0])
            sd = math.sqrt(max(var, 0.0))
            mi[i, j] = 1.0 - math.exp(mu)
            lo[i, j] = 1.0 - math.exp(mu + z * sd)
            hi[i, j] = 1.0 - math.exp(mu - z * sd)
    return MiSurface(state=str(state), sex=sex, ages=ages, years=years,
                     mi=mi, lower=lo, upper=hi, level=level)


def rank_states(rates: dict[str, float], age: int, year: int) -> RankTable:
    """Ascending rank table from per-state rates; ties break alphabetically."""
    entries = tuple(sorted(rates.items(), key=lambda kv: (kv[1], kv[0])))
    return RankTable(age=age, year=year, entries=entries)


def ratio_to_national(state_mean: float, national_mean: float) -> float:
    """Rate ratio exp(m_state - m_national) at one cell."""
    return math.exp(state_mean - national_mean)


def spread_metric(rates: dict[str, float]) -> float:
    """Second-worst over second-best rate; extremes dropped for stability."""
    if len(rates) < 4:
        raise ValueError("spread metric needs at least four states")
    ordered = sorted(rates.items(), key=lambda kv: (kv[1], kv[0]))
    return ordered[-2][1] / ordered[1][1]


def rank_trajectory(rates_by_year: dict[int, dict[str, float]], age: int):
    """Long-format rank rows (year, rank, state, rate) for bump charts."""
    rows = []
    for year in sorted(rates_by_year):
        table = rank_states(rates_by_year[year], age, year)
        for rank, (state, rate) in enumerate(table.entries, start=1):
            rows.append((year, rank, state, rate))
    return rows


def mi_heatmap_data(mi_by_state: dict[str, dict[int, float]],
                    sort_age: int = 65):
    """Column-sorted heatmap rows: states ordered by MI at `sort_age`.

    `mi_by_state` maps state -> {age: MI}.  Returns (ordered states,
    long-format rows (state, age, mi)) with the most-improving state first.
    """
    if not mi_by_state:
        raise ValueError("no states supplied")
    ordered = sorted(mi_by_state,
                     key=lambda s: (-mi_by_state[s].get(sort_age, -np.inf), s))
    rows = []
    for state in ordered:
        for age in sorted(mi_by_state[state]):
            rows.append((state, age, mi_by_state[state][age]))
    return ordered, rows
